//! Balancing conditions for the tower parameters at each singular point.

use crate::bubbles::dist2;
use crate::constants::ProblemParams;
use crate::error::{QcError, Result};
use crate::interactions::InteractionConstants;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSet {
    pub points: Vec<Vec<f64>>,
    pub dist: Vec<Vec<f64>>,
}

impl SingularSet {
    /// Requires `N >= 2` points of a common dimension, pairwise at distance `>= 2`.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(QcError::InvalidArgument("need at least two singular points".into()));
        }
        let n = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != n) {
            return Err(QcError::DimensionMismatch { expected: n, got: p.len() });
        }
        let dist: Vec<Vec<f64>> =
            points.iter().map(|a| points.iter().map(|b| dist2(a, b).sqrt()).collect()).collect();
        for i in 0..points.len() {
            for k in 0..i {
                if dist[i][k] < 2.0 {
                    return Err(QcError::Inadmissible(format!(
                        "points {k} and {i} at distance {:.4} < 2",
                        dist[i][k]
                    )));
                }
            }
        }
        Ok(Self { points, dist })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn min_distance(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.len() {
            for k in 0..i {
                m = m.min(self.dist[i][k]);
            }
        }
        m
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim()).map(|c| self.points.iter().map(|p| p[c]).sum::<f64>() / n).collect()
    }
}

fn check_q(set: &SingularSet, q: &[f64]) -> Result<()> {
    if q.len() != set.len() {
        return Err(QcError::DimensionMismatch { expected: set.len(), got: q.len() });
    }
    if q.iter().any(|v| !(*v > 0.0)) {
        return Err(QcError::InvalidArgument("q must lie in the positive octant".into()));
    }
    Ok(())
}

/// `A2 sum_{i' != i} q_{i'} (R_i R_{i'})^gamma |x_i - x_{i'}|^{-2 gamma} - q_i`.
pub fn b1_residual(set: &SingularSet, q: &[f64], r: &[f64], a2: f64, gamma: f64) -> Vec<f64> {
    (0..set.len())
        .map(|i| {
            let s: f64 = (0..set.len())
                .filter(|&k| k != i)
                .map(|k| q[k] * (r[i] * r[k]).powf(gamma) * set.dist[i][k].powf(-2.0 * gamma))
                .sum();
            a2 * s - q[i]
        })
        .collect()
}

/// Gauss-Newton in `ln R` with an SVD pseudo-inverse, so that systems with
/// a rank-deficient Jacobian take minimum-norm steps.
pub fn solve_b1(
    set: &SingularSet,
    q: &[f64],
    constants: &InteractionConstants,
    params: &ProblemParams,
    tol: f64,
) -> Result<Vec<f64>> {
    check_q(set, q)?;
    let a2 = constants.a2;
    if !(a2 > 0.0) {
        return Err(QcError::InvalidArgument(format!("A2 = {a2} must be positive")));
    }
    let g = params.gamma_s;
    let n = set.len();
    let r0 = set.min_distance() * a2.powf(-1.0 / (2.0 * g));
    let mut y = vec![r0.ln(); n];
    let max_iters = 100;
    for it in 0..=max_iters {
        let r: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let f = b1_residual(set, q, &r, a2, g);
        let fnorm = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if fnorm <= tol {
            return Ok(r);
        }
        if it == max_iters {
            return Err(QcError::NewtonDivergence { iters: it, residual: fnorm });
        }
        // dF_i/dy_k
        let jac = DMatrix::from_fn(n, n, |i, k| {
            let term = |a: usize, b: usize| a2 * q[b] * (r[a] * r[b]).powf(g) * set.dist[a][b].powf(-2.0 * g);
            if i == k {
                g * (0..n).filter(|&m| m != i).map(|m| term(i, m)).sum::<f64>()
            } else {
                g * term(i, k)
            }
        });
        let rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let step = svd.solve(&rhs, 1e-10 * smax).map_err(|_| QcError::IllConditioned(svd.singular_values.min()))?;
        let mut lam = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = y.iter().zip(step.iter()).map(|(a, b)| a + lam * b).collect();
            let tr: Vec<f64> = trial.iter().map(|v| v.exp()).collect();
            let tn = b1_residual(set, q, &tr, a2, g).iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if tn < fnorm {
                y = trial;
                moved = true;
                break;
            }
            lam *= 0.5;
        }
        if !moved {
            return Err(QcError::NoSolution(format!("B1 has no solution for q = {q:?} (residual {fnorm:.3e})")));
        }
    }
    unreachable!("loop returns on the final iteration")
}

/// Explicit translation parameters
/// `a0_i = -(A3/A1) sum (x_{i'} - x_i) |x_{i'} - x_i|^{-2 gamma - 2} (q_{i'}/q_i) (R_i R_{i'})^gamma`.
pub fn solve_b2(
    set: &SingularSet,
    q: &[f64],
    r: &[f64],
    constants: &InteractionConstants,
    params: &ProblemParams,
) -> Result<Vec<Vec<f64>>> {
    check_q(set, q)?;
    if r.len() != set.len() {
        return Err(QcError::DimensionMismatch { expected: set.len(), got: r.len() });
    }
    let g = params.gamma_s;
    let coef = -constants.a3 / constants.a1;
    Ok((0..set.len())
        .map(|i| {
            let mut out = vec![0.0; set.dim()];
            for k in (0..set.len()).filter(|&k| k != i) {
                let w = set.dist[i][k].powf(-2.0 * g - 2.0) * (q[k] / q[i]) * (r[i] * r[k]).powf(g);
                for (c, o) in out.iter_mut().enumerate() {
                    *o += coef * (set.points[k][c] - set.points[i][c]) * w;
                }
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobianReport {
    /// `dF/dq`.
    pub q_block: Vec<Vec<f64>>,
    /// `dF/dR`.
    pub r_block: Vec<Vec<f64>>,
    pub q_block_singular_values: Vec<f64>,
    pub q_kernel_dim: usize,
    pub q_kernel_vector: Vec<f64>,
    /// Angle between the kernel vector and `q`.
    pub kernel_angle: f64,
    /// `dF/dq` applied to `R`.
    pub dfq_on_r: Vec<f64>,
    /// `dF/dR` applied to `R`.
    pub dfr_on_r: Vec<f64>,
    /// Diagonal part of `dF/dR` applied to `R`.
    pub dfr_own_on_r: Vec<f64>,
    pub gamma_q: Vec<f64>,
    pub full_min_singular_value: f64,
}

impl JacobianReport {
    fn gap(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    /// `max |dF_q(R) - gamma q|`, the literal form of the claim.
    pub fn literal_gap(&self) -> f64 {
        Self::gap(&self.dfq_on_r, &self.gamma_q)
    }

    /// `max |diag(dF_R) R - gamma q|`.
    pub fn own_radius_gap(&self) -> f64 {
        Self::gap(&self.dfr_own_on_r, &self.gamma_q)
    }

    /// `max |dF_R R - 2 gamma q|`, the Euler identity for the homogeneous sum.
    pub fn euler_gap(&self) -> f64 {
        let two: Vec<f64> = self.gamma_q.iter().map(|v| 2.0 * v).collect();
        Self::gap(&self.dfr_on_r, &two)
    }
}

pub fn balance_jacobian(
    set: &SingularSet,
    q: &[f64],
    r: &[f64],
    constants: &InteractionConstants,
    params: &ProblemParams,
) -> Result<JacobianReport> {
    check_q(set, q)?;
    let n = set.len();
    let g = params.gamma_s;
    let a2 = constants.a2;
    let k = |i: usize, m: usize| a2 * (r[i] * r[m]).powf(g) * set.dist[i][m].powf(-2.0 * g);
    let qb = DMatrix::from_fn(n, n, |i, m| if i == m { -1.0 } else { k(i, m) });
    let rb = DMatrix::from_fn(n, n, |i, m| {
        if i == m {
            g / r[i] * (0..n).filter(|&l| l != i).map(|l| k(i, l) * q[l]).sum::<f64>()
        } else {
            g / r[m] * k(i, m) * q[m]
        }
    });
    let svd = qb.clone().svd(true, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let kernel_dim = sv.iter().filter(|s| **s < 1e-8 * smax.max(1.0)).count();
    let imin = sv.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0).unwrap_or(0);
    let vt = svd.v_t.ok_or(QcError::IllConditioned(0.0))?;
    let kv: Vec<f64> = vt.row(imin).iter().copied().collect();
    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cosang = (kv.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / qn).abs().min(1.0);
    let kernel_angle = if cosang > 1.0 - 1e-12 {
        // acos loses precision near 1; use the orthogonal residual instead
        let proj: Vec<f64> = q.iter().map(|v| v / qn * cosang).collect();
        kv.iter().zip(&proj).map(|(a, b)| (a.abs() - b.abs()).powi(2)).sum::<f64>().sqrt()
    } else {
        cosang.acos()
    };
    let rv = DVector::from_column_slice(r);
    let dfq_on_r: Vec<f64> = (&qb * &rv).iter().copied().collect();
    let dfr_on_r: Vec<f64> = (&rb * &rv).iter().copied().collect();
    let dfr_own_on_r: Vec<f64> = (0..n).map(|i| rb[(i, i)] * r[i]).collect();
    let mut full = DMatrix::zeros(n, 2 * n);
    full.view_mut((0, 0), (n, n)).copy_from(&qb);
    full.view_mut((0, n), (n, n)).copy_from(&rb);
    let fmin = full.svd(false, false).singular_values.min();
    if fmin < 1e-10 {
        return Err(QcError::IllConditioned(fmin));
    }
    let to_rows = |m: &DMatrix<f64>| (0..n).map(|i| m.row(i).iter().copied().collect()).collect();
    Ok(JacobianReport {
        q_block: to_rows(&qb),
        r_block: to_rows(&rb),
        q_block_singular_values: sv,
        q_kernel_dim: kernel_dim,
        q_kernel_vector: kv,
        kernel_angle,
        dfq_on_r,
        dfr_on_r,
        dfr_own_on_r,
        gamma_q: q.iter().map(|v| g * v).collect(),
        full_min_singular_value: fmin,
    })
}

/// `L_i = L - ln(q_i) / gamma`.
pub fn periods_from_q(q: &[f64], l: f64, params: &ProblemParams) -> Result<Vec<f64>> {
    if !(l > 0.0) || q.iter().any(|v| !(*v > 0.0)) {
        return Err(QcError::InvalidArgument("need L > 0 and q > 0".into()));
    }
    let li: Vec<f64> = q.iter().map(|v| l - v.ln() / params.gamma_s).collect();
    if let Some(bad) = li.iter().find(|v| **v <= 1.0) {
        return Err(QcError::InvalidArgument(format!("period {bad:.4} at or below 1")));
    }
    Ok(li)
}

/// Inverse of [`periods_from_q`].
pub fn q_from_periods(li: &[f64], l: f64, params: &ProblemParams) -> Vec<f64> {
    li.iter().map(|v| (params.gamma_s * (l - v)).exp()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalancedConfig {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub a0_hat: Vec<Vec<f64>>,
    pub l: f64,
    pub l_i: Vec<f64>,
    pub b1_residual: f64,
    pub b2_residual: f64,
    pub constants: InteractionConstants,
}

impl BalancedConfig {
    /// Solves (B1), assigns (B2) and derives the periods.
    pub fn solve(
        set: &SingularSet,
        q: &[f64],
        l: f64,
        constants: &InteractionConstants,
        params: &ProblemParams,
        tol: f64,
    ) -> Result<Self> {
        let r = solve_b1(set, q, constants, params, tol)?;
        Self::from_parts(set, q, r, l, constants, params)
    }

    /// Builds a configuration from given `R` (balanced or not).
    pub fn from_parts(
        set: &SingularSet,
        q: &[f64],
        r: Vec<f64>,
        l: f64,
        constants: &InteractionConstants,
        params: &ProblemParams,
    ) -> Result<Self> {
        let a0_hat = solve_b2(set, q, &r, constants, params)?;
        let l_i = periods_from_q(q, l, params)?;
        let b1 = b1_residual(set, q, &r, constants.a2, params.gamma_s).iter().fold(0.0f64, |a, b| a.max(b.abs()));
        Ok(Self { q: q.to_vec(), r, a0_hat, l, l_i, b1_residual: b1, b2_residual: 0.0, constants: *constants })
    }
}
