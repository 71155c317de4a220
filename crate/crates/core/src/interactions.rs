//! Interaction constants, the function Psi, bubble interaction integrals
//! and cokernel Gram matrices.

use crate::bubbles::{bubble_profile, v_sph, v_sph_prime, TowerConfig};
use crate::constants::ProblemParams;
use crate::error::{QcError, Result};
use crate::fit::{log_slope, LineFit};
use crate::quad::{integrate_pieces, integrate_pieces_scaled, integrate_to_inf};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const MAX_SEG: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstMethod {
    ClosedIntegral,
    OracleFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub method: ConstMethod,
    pub est_error: f64,
}

impl InteractionConstants {
    /// Closed-integral constants.
    pub fn closed(params: &ProblemParams, tol: f64) -> Result<Self> {
        let a1 = const_a1(params, tol)?;
        let a2 = const_a2(params, tol)?;
        let a3 = const_a3(params, tol)?;
        Ok(Self { a1, a2, a3, method: ConstMethod::ClosedIntegral, est_error: tol * (a1.abs() + a2.abs() + a3.abs()) })
    }

    /// A2 and A3 replaced by their oracle fits; A1 stays the closed integral.
    pub fn oracle(params: &ProblemParams, tol: f64) -> Result<Self> {
        let a1 = const_a1(params, tol)?;
        let f2 = oracle_a2(params, tol)?;
        let f3 = oracle_a3(params, tol)?;
        Ok(Self { a1, a2: f2.value, a3: f3.value, method: ConstMethod::OracleFit, est_error: f2.est_error.max(f3.est_error) })
    }

    pub fn signs_ok(&self) -> bool {
        self.a1 > 0.0 && self.a2 > 0.0 && self.a3 < 0.0
    }
}

fn radial_rn<F: Fn(f64) -> f64 + Sync>(g: F, n: usize, tol: f64) -> Result<f64> {
    // integral over R^n of a radial function, in s = ln r
    let h = |s: f64| {
        let r = s.exp();
        g(r) * r.powi(n as i32)
    };
    let pts: Vec<f64> = (-12..=12).map(|k| 5.0 * k as f64).collect();
    let mid = integrate_pieces_scaled(&h, &pts, tol, MAX_SEG)?.value;
    Ok(crate::constants::sphere_area(n - 1) * mid)
}

/// `((n+2 sigma)(n-2 sigma)/n) int_{R^n} (|x|^{2 gamma}(1+|x|^2)^{gamma'} + 1)^{-1} dx`.
pub fn const_a1(params: &ProblemParams, tol: f64) -> Result<f64> {
    let (g, gd) = (params.gamma_s, params.gamma_s_dual);
    let n = params.n as f64;
    let pre = (n + 2.0 * params.sigma) * (n - 2.0 * params.sigma) / n;
    let v = radial_rn(|r| 1.0 / (r.powf(2.0 * g) * (1.0 + r * r).powf(gd) + 1.0), params.n, tol)?;
    Ok(pre * v)
}

/// `((n+2 sigma)/2) int (|x|^2 - 1)(1+|x|^2)^{-gamma'-1} dx`, the printed
/// exponent `-gamma-1` replaced by `-gamma'-1`.
pub fn const_a2(params: &ProblemParams, tol: f64) -> Result<f64> {
    let gd = params.gamma_s_dual;
    let v = radial_rn(|r| (r * r - 1.0) * (1.0 + r * r).powf(-gd - 1.0), params.n, tol)?;
    Ok(gd * v)
}

/// `-((n-2 sigma)^2/n) int |x|^2 (1+|x|^2)^{-gamma'-1} dx`, same correction.
pub fn const_a3(params: &ProblemParams, tol: f64) -> Result<f64> {
    let gd = params.gamma_s_dual;
    let n = params.n as f64;
    let pre = -(n - 2.0 * params.sigma).powi(2) / n;
    let v = radial_rn(|r| r * r * (1.0 + r * r).powf(-gd - 1.0), params.n, tol)?;
    Ok(pre * v)
}

/// `int_{R^n} (1+|x|^2)^{-gamma'} dx`.
pub fn bubble_mass(params: &ProblemParams, tol: f64) -> Result<f64> {
    let gd = params.gamma_s_dual;
    radial_rn(|r| (1.0 + r * r).powf(-gd), params.n, tol)
}

/// Signed `Psi(l) = int f'(v(t)) v(t + l) v'(t) dt`, odd in `l`.
pub fn psi_signed(ell: f64, params: &ProblemParams, tol: f64) -> Result<f64> {
    let f = |t: f64| params.f_prime(v_sph(t, params)) * v_sph(t + ell, params) * v_sph_prime(t, params);
    let a = -ell.abs() - 2.0;
    let b = 2.0;
    let pts = [a, -ell.abs(), -0.5 * ell.abs(), 0.0, b];
    let mut sorted = pts.to_vec();
    sorted.sort_by(|x, y| x.total_cmp(y));
    sorted.dedup();
    let abs_tol = 1e-13;
    let mid = integrate_pieces(&f, &sorted, abs_tol, tol, MAX_SEG)?.value;
    let hi = integrate_to_inf(|u| f(b + u), 0.0, abs_tol, tol, MAX_SEG)?.value;
    let lo = integrate_to_inf(|u| f(a - u), 0.0, abs_tol, tol, MAX_SEG)?.value;
    Ok(lo + mid + hi)
}

pub fn psi(ell: f64, params: &ProblemParams, tol: f64) -> Result<f64> {
    if !(ell >= 0.0) {
        return Err(QcError::InvalidArgument(format!("Psi needs l >= 0, got {ell}")));
    }
    psi_signed(ell, params, tol)
}

/// `int_{R^n} f'(U_1) U_2 d_{lambda_1} U_1 dx` for concentric bubbles.
pub fn interaction_lambda(l1: f64, l2: f64, params: &ProblemParams, tol: f64) -> Result<f64> {
    if !(l1 > 0.0 && l2 > 0.0) {
        return Err(QcError::InvalidArgument("scales must be positive".into()));
    }
    let g = params.gamma_s;
    let h = |r: f64| {
        let r2 = r * r;
        let u1 = bubble_profile(l1, r2, g);
        let du1 = g * u1 * (r2 - l1 * l1) / (l1 * (l1 * l1 + r2));
        params.f_prime(u1) * bubble_profile(l2, r2, g) * du1
    };
    radial_two_scale(h, params.n, l1, l2, tol)
}

fn radial_two_scale<F: Fn(f64) -> f64>(g: F, n: usize, l1: f64, l2: f64, tol: f64) -> Result<f64> {
    let h = |s: f64| {
        let r = s.exp();
        g(r) * r.powi(n as i32)
    };
    let (a, b) = (l1.ln().min(l2.ln()), l1.ln().max(l2.ln()));
    let mut pts = vec![a - 3.0, a, b, b + 3.0];
    let steps = ((b - a) / 2.0).ceil() as usize;
    for k in 1..steps {
        pts.push(a + (b - a) * k as f64 / steps as f64);
    }
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup();
    // integrands decay at least like e^{-2 sigma |s|} outside the scales
    let lo = pts[0];
    let hi = pts[pts.len() - 1];
    pts.insert(0, lo - 60.0);
    pts.insert(1, lo - 20.0);
    pts.push(hi + 20.0);
    pts.push(hi + 60.0);
    let mid = integrate_pieces_scaled(&h, &pts, tol, MAX_SEG)?.value;
    Ok(crate::constants::sphere_area(n - 1) * mid)
}

/// `int f'(U_1) U_3 D U_1 dx` with `U_1` at the origin, `U_3` at `d e_1`;
/// `D = d/dlambda_1` for mode 0 and the spatial derivative `d/dx_l` otherwise.
pub fn interaction_faraway(l1: f64, l3: f64, d: f64, ell: usize, params: &ProblemParams, tol: f64) -> Result<f64> {
    if !(l1 > 0.0 && l3 > 0.0 && d > 0.0) {
        return Err(QcError::InvalidArgument("scales and distance must be positive".into()));
    }
    let n = params.n;
    if ell > n {
        return Err(QcError::InvalidArgument(format!("mode {ell} beyond dimension {n}")));
    }
    if ell >= 2 {
        // odd in the transverse coordinate: the azimuthal moment vanishes
        return Ok(0.0);
    }
    let g = params.gamma_s;
    let inner_tol = tol * 0.1;
    let theta_pts: Vec<f64> = {
        let mut v = vec![0.0];
        for m in [1.0, 10.0, 100.0] {
            let b = m * l3 / d;
            if b < 1.0 {
                v.push(b);
            }
        }
        v.push(1.0);
        v.push(std::f64::consts::PI);
        v
    };
    let radial = |s: f64| -> f64 {
        let r = s.exp();
        let r2 = r * r;
        let u1 = bubble_profile(l1, r2, g);
        let fp = params.f_prime(u1);
        let den = l1 * l1 + r2;
        let inner = |th: f64| {
            let (sn, cs) = th.sin_cos();
            let rho3 = r2 + d * d - 2.0 * r * d * cs;
            let du = if ell == 0 { g * u1 * (r2 - l1 * l1) / (l1 * den) } else { -2.0 * g * u1 * r * cs / den };
            fp * bubble_profile(l3, rho3, g) * du * sn.powi(n as i32 - 2)
        };
        let v = integrate_pieces(inner, &theta_pts, 1e-300, inner_tol, MAX_SEG).map(|q| q.value).unwrap_or(f64::NAN);
        v * r.powi(n as i32)
    };
    let ld = d.ln();
    let a = l1.ln();
    let mut pts = vec![a - 4.0, a, a + 2.0];
    let mut s = a + 2.0;
    while s < ld - 1.0 {
        s += 1.0;
        pts.push(s.min(ld - 0.5));
    }
    for e in [-0.2, -0.02, 0.0, 0.02, 0.2, 1.0, 3.0] {
        pts.push(ld + e);
    }
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    let lo = pts[0];
    let hi = pts[pts.len() - 1];
    let mid = integrate_pieces(&radial, &pts, 0.0, tol, MAX_SEG)?.value;
    let left = integrate_to_inf(|u| radial(lo - u), 0.0, 0.0, tol, MAX_SEG)?.value;
    let right = integrate_to_inf(|u| radial(hi + u), 0.0, 0.0, tol, MAX_SEG)?.value;
    let v = left + mid + right;
    if !v.is_finite() {
        return Err(QcError::QuadratureBudget { value: v, abs_err: f64::INFINITY, evals: 0 });
    }
    Ok(crate::constants::sphere_area(n - 2) * v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    /// Extrapolated coefficient divided by `c 2^n`, comparable to the closed form.
    pub value: f64,
    /// Raw extrapolated coefficient of the interaction integral.
    pub raw: f64,
    pub est_error: f64,
}

fn richardson(r_big: f64, r_small: f64, ratio2: f64) -> (f64, f64) {
    let a = (ratio2 * r_small - r_big) / (ratio2 - 1.0);
    (a, (r_small - a).abs())
}

/// Fits `A2` from `I ~ A d^{-2 gamma} (l1 l3)^gamma / l1` at `d = 2`.
pub fn oracle_a2(params: &ProblemParams, tol: f64) -> Result<OracleFit> {
    let g = params.gamma_s;
    let d = 2.0;
    let ratio = |lam: f64| -> Result<f64> {
        let i = interaction_faraway(lam, lam, d, 0, params, tol)?;
        Ok(i / (d.powf(-2.0 * g) * lam.powf(2.0 * g) / lam))
    };
    let (a, e) = richardson(ratio(1e-2)?, ratio(1e-3)?, 100.0);
    let norm = params.c_ns * 2f64.powi(params.n as i32);
    Ok(OracleFit { value: a / norm, raw: a, est_error: e / norm })
}

/// Fits `A3` from `I ~ A x_l |x|^{-2 gamma - 2} (l1 l3)^gamma` at `x = 2 e_1`.
pub fn oracle_a3(params: &ProblemParams, tol: f64) -> Result<OracleFit> {
    let g = params.gamma_s;
    let d = 2.0;
    let ratio = |lam: f64| -> Result<f64> {
        let i = interaction_faraway(lam, lam, d, 1, params, tol)?;
        Ok(i / (d * d.powf(-2.0 * g - 2.0) * lam.powf(2.0 * g)))
    };
    let (a, e) = richardson(ratio(1e-2)?, ratio(1e-3)?, 100.0);
    let norm = params.c_ns * 2f64.powi(params.n as i32);
    Ok(OracleFit { value: a / norm, raw: a, est_error: e / norm })
}

/// Relative gap between the closed and oracle values of `A2` and `A3`;
/// returns `ConstantMismatch` above `max_rel`.
pub fn cross_validate(closed: &InteractionConstants, oracle: &InteractionConstants, max_rel: f64) -> Result<(f64, f64)> {
    let g2 = (closed.a2 - oracle.a2).abs() / closed.a2.abs();
    let g3 = (closed.a3 - oracle.a3).abs() / closed.a3.abs();
    if g2 > max_rel || g3 > max_rel {
        return Err(QcError::ConstantMismatch(format!(
            "A2 closed {:.6} vs oracle {:.6}; A3 closed {:.6} vs oracle {:.6}",
            closed.a2, oracle.a2, closed.a3, oracle.a3
        )));
    }
    Ok((g2, g3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GramPairing {
    /// `Zbar Zbar` for translation modes and `Zbar Z` for the dilation mode.
    Printed,
    /// `Zbar Z` for every mode.
    Mixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GramMatrix {
    /// Row/column labels `(j, l)`.
    pub labels: Vec<(usize, usize)>,
    pub entries: Vec<Vec<f64>>,
    pub pairing: GramPairing,
}

impl GramMatrix {
    pub fn get(&self, a: (usize, usize), b: (usize, usize)) -> Option<f64> {
        let i = self.labels.iter().position(|x| *x == a)?;
        let k = self.labels.iter().position(|x| *x == b)?;
        Some(self.entries[i][k])
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.labels.len();
        DMatrix::from_fn(n, n, |i, k| self.entries[i][k])
    }

    /// Slope of `ln |G((0,l),(j,l))|` against `t_j - t_0`, `j >= 1`;
    /// `normalized` divides by the geometric mean of the diagonal entries.
    pub fn decay_fit(&self, ell: usize, period: f64, normalized: bool) -> Option<LineFit> {
        let js: Vec<usize> = self.labels.iter().filter(|x| x.1 == ell && x.0 > 0).map(|x| x.0).collect();
        let dt: Vec<f64> = js.iter().map(|j| 2.0 * period * *j as f64).collect();
        let d0 = self.get((0, ell), (0, ell))?;
        let vals: Vec<f64> = js
            .iter()
            .map(|j| {
                let v = self.get((0, ell), (*j, ell)).unwrap_or(0.0);
                if normalized {
                    let dj = self.get((*j, ell), (*j, ell)).unwrap_or(f64::NAN);
                    v / (d0 * dj).abs().sqrt()
                } else {
                    v
                }
            })
            .collect();
        log_slope(&dt, &vals)
    }
}

/// Gram matrix of cokernels against kernels over one concentric tower.
pub fn gram_cokernels(cfg: &TowerConfig, params: &ProblemParams, tol: f64, pairing: GramPairing) -> Result<GramMatrix> {
    if cfg.truncation() > 6 {
        return Err(QcError::InvalidArgument("Gram matrix limited to J <= 6".into()));
    }
    if cfg.a.iter().flatten().any(|v| *v != 0.0) {
        return Err(QcError::Unsupported("Gram matrix implemented for concentric towers only".into()));
    }
    let n = params.n;
    let g = params.gamma_s;
    let jm = cfg.truncation();
    let labels: Vec<(usize, usize)> = (0..=jm).flat_map(|j| (0..=n).map(move |l| (j, l))).collect();
    // radial factors; translation modes carry the angular factor x_l / |x|
    let zrad = |j: usize, ell: usize, r: f64| -> (f64, f64) {
        let lam = cfg.lambda(j as i64);
        let r2 = r * r;
        let den = lam * lam + r2;
        let u = bubble_profile(lam, r2, g);
        let z = if ell == 0 {
            g * u * (r2 - lam * lam) / den / (1.0 + cfg.r[j])
        } else {
            lam * 2.0 * g * u * r / den
        };
        (z, params.f_prime(u) * z)
    };
    let pairs: Vec<(usize, usize)> =
        (0..labels.len()).flat_map(|a| (a..labels.len()).map(move |b| (a, b))).collect();
    let vals: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ja, la) = labels[a];
            let (jb, lb) = labels[b];
            if la != lb {
                return Ok(((a, b), 0.0));
            }
            let both_zbar = la > 0 && pairing == GramPairing::Printed;
            let h = |r: f64| {
                let (_, zb) = zrad(ja, la, r);
                let (z2, zb2) = zrad(jb, lb, r);
                zb * if both_zbar { zb2 } else { z2 }
            };
            let ang = if la == 0 { 1.0 } else { 1.0 / n as f64 };
            let v = radial_two_scale(h, n, cfg.lambda(ja as i64), cfg.lambda(jb as i64), tol)?;
            Ok(((a, b), ang * v))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = labels.len();
    let mut entries = vec![vec![0.0; m]; m];
    for ((a, b), v) in vals {
        entries[a][b] = v;
        entries[b][a] = v;
    }
    Ok(GramMatrix { labels, entries, pairing })
}
