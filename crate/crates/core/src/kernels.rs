//! Riesz kernel on R^n and its cylindrical (Emden-Fowler) counterparts.

use crate::constants::{pochhammer, ProblemParams};
use crate::error::{QcError, Result};
use crate::quad::{integrate, integrate_pieces, integrate_to_inf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const MAX_SEG: usize = 2000;

/// `int_{-1}^{1} (1 - z^2)^wpow (1 + delta - z)^(-expo) dz` for `delta >= 0`.
///
/// Both endpoints are desingularized: `z = 1 - u^2` on the right half and
/// `z = -1 + w^2` on the left half.
pub fn angular_integral(delta: f64, expo: f64, wpow: f64, tol: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(QcError::InvalidArgument(format!("delta = {delta} must be >= 0")));
    }
    let right = |u: f64| {
        let u2 = u * u;
        2.0 * u * (u2 * (2.0 - u2)).powf(wpow) * (delta + u2).powf(-expo)
    };
    let left = |w: f64| {
        let w2 = w * w;
        2.0 * w * (w2 * (2.0 - w2)).powf(wpow) * (2.0 + delta - w2).powf(-expo)
    };
    let mut pts = vec![0.0];
    let sd = delta.sqrt();
    for m in [0.0625, 0.25, 1.0, 4.0, 16.0] {
        let b = m * sd;
        if b > 1e-12 && b < 1.0 {
            pts.push(b);
        }
    }
    pts.push(1.0);
    let r = integrate_pieces(right, &pts, 0.0, tol, MAX_SEG)?;
    let l = integrate(left, 0.0, 1.0, 0.0, tol, MAX_SEG)?;
    Ok(r.value + l.value)
}

fn delta_of(t: f64) -> f64 {
    let s = (0.5 * t).sinh();
    2.0 * s * s
}

/// Cylindrical dual kernel R-hat at `t` (uncalibrated).
pub fn riesz_kernel_cyl(t: f64, params: &ProblemParams, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    let g = params.gamma_s;
    let wpow = (params.n as f64 - 3.0) / 2.0;
    let a = angular_integral(delta_of(t), g, wpow, tol)?;
    Ok(2f64.powf(-g) * params.omega_n2() * a)
}

/// Cylindrical singular kernel K-hat at `t`, `|t| >= t_min` (uncalibrated).
pub fn singular_kernel_cyl(t: f64, params: &ProblemParams, tol: f64, t_min: f64) -> Result<f64> {
    check_tol(tol)?;
    if t.abs() < t_min {
        return Err(QcError::InvalidArgument(format!("|t| = {} below guard {t_min}", t.abs())));
    }
    let g = params.gamma_s_dual;
    let wpow = (params.n as f64 - 3.0) / 2.0;
    let a = angular_integral(delta_of(t), g, wpow, tol)?;
    Ok(2f64.powf(-g) * params.omega_n2() * a)
}

/// Funk-Hecke eigenvalue of the dual kernel for the degree-`k` zonal
/// harmonic, normalized so that `k = 0` gives R-hat. Computed from the
/// Rodrigues form, whose integrand is positive for every `k`.
pub fn zonal_kernel(k: usize, s: f64, params: &ProblemParams, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    if params.n < 3 {
        return Err(QcError::Unsupported("zonal expansion needs n >= 3".into()));
    }
    let g = params.gamma_s;
    let nf = params.n as f64;
    let wpow = k as f64 + (nf - 3.0) / 2.0;
    let pref = pochhammer(g, k) / (2f64.powi(k as i32) * pochhammer((nf - 1.0) / 2.0, k));
    let a = angular_integral(delta_of(s), g + k as f64, wpow, tol)?;
    Ok(2f64.powf(-g) * params.omega_n2() * pref * a)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(QcError::InvalidArgument(format!("tol = {tol} must be positive")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Periodized {
    pub value: f64,
    pub tail_bound: f64,
}

/// `sum_{|j| <= J} kernel(t - 2 j L)`; the tail bound assumes `kernel(s)`
/// decays at least like `exp(-rate |s|)` beyond the truncation.
pub fn periodize<F: Fn(f64) -> f64>(kernel: F, t: f64, l: f64, j_max: usize, rate: f64) -> Periodized {
    let mut value = 0.0;
    let jm = j_max as i64;
    for j in -jm..=jm {
        value += kernel(t - 2.0 * j as f64 * l);
    }
    let edge = 2.0 * (j_max as f64 + 1.0) * l - t.abs();
    let first = kernel(edge);
    let tail_bound = 2.0 * first / (1.0 - (-2.0 * rate * l).exp());
    Periodized { value, tail_bound }
}

/// Riesz kernel `C_{n,sigma} |x - y|^{2 sigma - n}`.
pub fn riesz_kernel_rn(x: &[f64], y: &[f64], params: &ProblemParams) -> Result<f64> {
    if x.len() != y.len() {
        return Err(QcError::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if d2 == 0.0 {
        return Err(QcError::InvalidArgument("riesz kernel evaluated on the diagonal".into()));
    }
    Ok(params.riesz_const() * d2.powf(-params.gamma_s))
}

/// `int R-hat(t - tau) * c * cosh(tau)^{-gamma'} dtau` (no calibration factor).
pub fn sphere_convolution(t: f64, params: &ProblemParams, tol: f64) -> Result<f64> {
    let gd = params.gamma_s_dual;
    let c = params.c_ns;
    let kt = tol * 0.01;
    let f = |tau: f64| -> f64 {
        let k = riesz_kernel_cyl(t - tau, params, kt).unwrap_or(f64::NAN);
        k * c * tau.cosh().powf(-gd)
    };
    let lo = t.min(0.0);
    let hi = t.max(0.0);
    let mid = if hi > lo { integrate(&f, lo, hi, 0.0, tol, MAX_SEG)?.value } else { 0.0 };
    let right = integrate_to_inf(|s| f(hi + s), 0.0, 0.0, tol, MAX_SEG)?.value;
    let left = integrate_to_inf(|s| f(lo - s), 0.0, 0.0, tol, MAX_SEG)?.value;
    let v = mid + right + left;
    if !v.is_finite() {
        return Err(QcError::QuadratureBudget { value: v, abs_err: f64::INFINITY, evals: 0 });
    }
    Ok(v)
}

/// Scale factor making `cosh^{-gamma}` a fixed point of the cylindrical
/// dual operator, fitted at `t = 0` and checked at `t = 1`.
pub fn calibrate_cyl_kernel(params: &ProblemParams) -> Result<f64> {
    let tol = 1e-11;
    let k0 = sphere_convolution(0.0, params, tol)?;
    if !(k0 > 0.0) {
        return Err(QcError::Calibration(format!("nonpositive convolution {k0}")));
    }
    let kappa = 1.0 / k0;
    let k1 = sphere_convolution(1.0, params, tol)?;
    let target = 1f64.cosh().powf(-params.gamma_s);
    let miss = (kappa * k1 - target).abs() / target;
    if miss > 1e-6 {
        return Err(QcError::Calibration(format!("fixed point off by {miss:.3e} at t = 1")));
    }
    Ok(kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Singular,
    Riesz,
}

/// Uniform table of `ln k(|t|)` with 4-point Lagrange interpolation and an
/// exponential tail beyond the last node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogTable {
    pub h: f64,
    pub t0: f64,
    pub ln_values: Vec<f64>,
    pub tail_rate: f64,
}

impl LogTable {
    pub fn t_max(&self) -> f64 {
        self.t0 + self.h * (self.ln_values.len() - 1) as f64
    }

    fn ln_eval(&self, t: f64) -> f64 {
        let t = t.abs();
        let n = self.ln_values.len();
        let tm = self.t_max();
        if t >= tm {
            return self.ln_values[n - 1] - self.tail_rate * (t - tm);
        }
        let x = (t - self.t0) / self.h;
        let i = x.floor() as i64;
        let f = x - i as f64;
        // stencil i-1..i+2, reflected at t0 = 0 and clamped at the end
        let lo = (i - 1).max(if self.t0 == 0.0 { -(n as i64) } else { 0 });
        let lo = lo.min(n as i64 - 4);
        let idx = |k: i64| -> f64 {
            let k = if k < 0 { -k } else { k };
            self.ln_values[k as usize]
        };
        let xs = [lo, lo + 1, lo + 2, lo + 3];
        let xf = x;
        let mut s = 0.0;
        for a in 0..4 {
            let mut w = 1.0;
            for b in 0..4 {
                if a != b {
                    w *= (xf - xs[b] as f64) / ((xs[a] - xs[b]) as f64);
                }
            }
            s += w * idx(xs[a]);
        }
        let _ = f;
        s
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.ln_eval(t).exp()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CylKernelTable {
    pub params: ProblemParams,
    pub kind: KernelKind,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub est_error: Vec<f64>,
    pub calibration: f64,
    table: LogTable,
}

impl CylKernelTable {
    /// Tabulates the uncalibrated kernel on `[t_min, t_max]` with spacing `h`.
    /// `t_min` must be 0 for the Riesz kind.
    pub fn build(
        params: &ProblemParams,
        kind: KernelKind,
        t_min: f64,
        t_max: f64,
        h: f64,
        tol: f64,
    ) -> Result<Self> {
        if !(h > 0.0) || !(t_max > t_min + 4.0 * h) {
            return Err(QcError::InvalidArgument("kernel table needs at least 5 nodes".into()));
        }
        let count = ((t_max - t_min) / h).round() as usize + 1;
        let grid: Vec<f64> = (0..count).map(|i| t_min + i as f64 * h).collect();
        let values: Vec<f64> = grid
            .par_iter()
            .map(|&t| match kind {
                KernelKind::Riesz => riesz_kernel_cyl(t, params, tol),
                KernelKind::Singular => singular_kernel_cyl(t, params, tol, t_min.min(t).max(1e-300)),
            })
            .collect::<Result<Vec<f64>>>()?;
        let rate = match kind {
            KernelKind::Riesz => params.gamma_s,
            KernelKind::Singular => params.gamma_s_dual,
        };
        let calibration = params.kernel_scale();
        let table = LogTable { h, t0: t_min, ln_values: values.iter().map(|v| v.ln()).collect(), tail_rate: rate };
        let est_error = values.iter().map(|v| v * tol).collect();
        Ok(Self { params: *params, kind, grid, values, est_error, calibration, table })
    }

    /// Interpolated uncalibrated kernel value.
    pub fn eval(&self, t: f64) -> f64 {
        self.table.eval(t)
    }

    pub fn to_csv_rows(&self) -> Vec<(f64, f64, f64)> {
        self.grid
            .iter()
            .zip(&self.values)
            .zip(&self.est_error)
            .map(|((t, v), e)| (*t, *v, *e))
            .collect()
    }
}

/// Zonal kernels `R-hat_k`, `k = 0..=k_max`, tabulated in `s >= 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZonalKernelTable {
    pub k_max: usize,
    tables: Vec<LogTable>,
}

impl ZonalKernelTable {
    pub fn build(params: &ProblemParams, k_max: usize, s_max: f64, h: f64, tol: f64) -> Result<Self> {
        let count = (s_max / h).round() as usize + 1;
        let jobs: Vec<(usize, usize)> = (0..=k_max).flat_map(|k| (0..count).map(move |i| (k, i))).collect();
        let vals: Vec<f64> = jobs
            .par_iter()
            .map(|&(k, i)| zonal_kernel(k, i as f64 * h, params, tol))
            .collect::<Result<Vec<f64>>>()?;
        let tables = (0..=k_max)
            .map(|k| LogTable {
                h,
                t0: 0.0,
                ln_values: vals[k * count..(k + 1) * count].iter().map(|v| v.ln()).collect(),
                tail_rate: params.gamma_s + k as f64,
            })
            .collect();
        Ok(Self { k_max, tables })
    }

    pub fn eval(&self, k: usize, s: f64) -> f64 {
        self.tables[k].eval(s)
    }
}
