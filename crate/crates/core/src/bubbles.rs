//! Bubbles, deformed half towers and their approximate kernels.

use crate::constants::ProblemParams;
use crate::error::{QcError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub lambda: f64,
    pub center: Vec<f64>,
}

impl Bubble {
    pub fn new(lambda: f64, center: Vec<f64>) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(QcError::InvalidArgument(format!("bubble scale {lambda} must be positive")));
        }
        Ok(Self { lambda, center })
    }
}

pub(crate) fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `(2 lambda / (lambda^2 + rho^2))^gamma` as a function of `rho^2`.
#[inline]
pub fn bubble_profile(lambda: f64, rho2: f64, gamma: f64) -> f64 {
    (2.0 * lambda / (lambda * lambda + rho2)).powf(gamma)
}

pub fn bubble_eval(x: &[f64], b: &Bubble, params: &ProblemParams) -> f64 {
    bubble_profile(b.lambda, dist2(x, &b.center), params.gamma_s)
}

/// Standard sphere solution centered at the origin with unit scale.
pub fn u_sph(r: f64, params: &ProblemParams) -> f64 {
    bubble_profile(1.0, r * r, params.gamma_s)
}

/// `cosh(t)^{-gamma}`, the cylindrical picture of `u_sph`.
pub fn v_sph(t: f64, params: &ProblemParams) -> f64 {
    t.cosh().powf(-params.gamma_s)
}

pub fn v_sph_prime(t: f64, params: &ProblemParams) -> f64 {
    -params.gamma_s * t.tanh() * v_sph(t, params)
}

/// `e^{-gamma t} u(e^{-t})` for a radial profile `u(r)`.
pub fn ef_forward<F: Fn(f64) -> f64>(u: F, t: f64, params: &ProblemParams) -> f64 {
    (-params.gamma_s * t).exp() * u((-t).exp())
}

/// `|x|^{-gamma} v(-ln |x|)`.
pub fn ef_inverse<F: Fn(f64) -> f64>(v: F, x: &[f64], params: &ProblemParams) -> Result<f64> {
    let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(QcError::InvalidArgument("inverse transform undefined at the origin".into()));
    }
    Ok(r.powf(-params.gamma_s) * v(-r.ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelIndex {
    pub i: usize,
    pub j: usize,
    pub ell: usize,
}

/// Deformed half bubble tower at one singular point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub index: usize,
    pub center: Vec<f64>,
    pub period: f64,
    pub base_r: f64,
    /// Dilation perturbations `r_j`, `j = 0..=J`.
    pub r: Vec<f64>,
    /// Translations `a_j`, `j = 0..=J`.
    pub a: Vec<Vec<f64>>,
}

impl TowerConfig {
    /// Checks the admissibility bounds `|r_j| <= e^{-tau t_j}` and
    /// `|a_j| <= a_bound * lambda_j^2`.
    pub fn new(
        index: usize,
        center: Vec<f64>,
        period: f64,
        base_r: f64,
        r: Vec<f64>,
        a: Vec<Vec<f64>>,
        tau: f64,
        a_bound: f64,
    ) -> Result<Self> {
        if !(period > 0.0) || !(base_r > 0.0) {
            return Err(QcError::Inadmissible(format!("period {period} and R {base_r} must be positive")));
        }
        if r.is_empty() || r.len() != a.len() {
            return Err(QcError::DimensionMismatch { expected: r.len().max(1), got: a.len() });
        }
        let n = center.len();
        let cfg = Self { index, center, period, base_r, r, a };
        for j in 0..cfg.r.len() {
            if cfg.a[j].len() != n {
                return Err(QcError::DimensionMismatch { expected: n, got: cfg.a[j].len() });
            }
            let tj = cfg.t_level(j);
            if cfg.r[j].abs() > (-tau * tj).exp() || cfg.r[j] <= -1.0 {
                return Err(QcError::Inadmissible(format!("|r_{j}| = {} exceeds e^(-tau t_j)", cfg.r[j].abs())));
            }
            let lam = cfg.lambda(j as i64);
            let an = cfg.a[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            if an > a_bound * lam * lam {
                return Err(QcError::Inadmissible(format!("|a_{j}| = {an:.3e} exceeds bound")));
            }
        }
        Ok(cfg)
    }

    /// Unperturbed tower with levels `0..=levels`.
    pub fn standard(index: usize, center: Vec<f64>, period: f64, base_r: f64, levels: usize) -> Result<Self> {
        let n = center.len();
        Self::new(index, center, period, base_r, vec![0.0; levels + 1], vec![vec![0.0; n]; levels + 1], 0.0, 0.0)
    }

    /// Number of levels needed so that `lambda_J^gamma < eps`.
    pub fn levels_for(period: f64, base_r: f64, gamma: f64, eps: f64) -> usize {
        let mut j = 0usize;
        while (base_r * (-(1.0 + 2.0 * j as f64) * period).exp()).powf(gamma) >= eps && j < 10_000 {
            j += 1;
        }
        j
    }

    pub fn truncation(&self) -> usize {
        self.r.len() - 1
    }

    pub fn t_level(&self, j: usize) -> f64 {
        (1.0 + 2.0 * j as f64) * self.period
    }

    fn r_at(&self, j: i64) -> f64 {
        if j >= 0 && (j as usize) < self.r.len() {
            self.r[j as usize]
        } else {
            0.0
        }
    }

    /// `lambda_j = R (1 + r_j) e^{-(1+2j) L}`; negative levels are unperturbed.
    pub fn lambda(&self, j: i64) -> f64 {
        self.base_r * (1.0 + self.r_at(j)) * (-(1.0 + 2.0 * j as f64) * self.period).exp()
    }

    pub fn level_center(&self, j: i64) -> Vec<f64> {
        if j >= 0 && (j as usize) < self.a.len() {
            self.center.iter().zip(&self.a[j as usize]).map(|(c, a)| c + a).collect()
        } else {
            self.center.clone()
        }
    }

    pub fn bubble(&self, j: i64) -> Bubble {
        Bubble { lambda: self.lambda(j), center: self.level_center(j) }
    }
}

/// Sum of the tower bubbles: `j = 0..=J` if `half`, otherwise `j = -J..=J`.
pub fn tower_eval(x: &[f64], cfg: &TowerConfig, half: bool, params: &ProblemParams) -> f64 {
    let jm = cfg.truncation() as i64;
    let lo = if half { 0 } else { -jm };
    (lo..=jm).map(|j| bubble_eval(x, &cfg.bubble(j), params)).sum()
}

fn check_index(x: &[f64], idx: &KernelIndex, cfg: &TowerConfig) -> Result<()> {
    if idx.i != cfg.index {
        return Err(QcError::InvalidArgument(format!("index {} does not match tower {}", idx.i, cfg.index)));
    }
    if idx.j > cfg.truncation() {
        return Err(QcError::InvalidArgument(format!("level {} beyond truncation", idx.j)));
    }
    if idx.ell > cfg.center.len() {
        return Err(QcError::InvalidArgument(format!("mode {} beyond dimension", idx.ell)));
    }
    if x.len() != cfg.center.len() {
        return Err(QcError::DimensionMismatch { expected: cfg.center.len(), got: x.len() });
    }
    Ok(())
}

/// `Z_{j,0} = dU/dr_j` and `Z_{j,l} = -lambda_j dU/dx_l`.
pub fn kernel_z(x: &[f64], idx: &KernelIndex, cfg: &TowerConfig, params: &ProblemParams) -> Result<f64> {
    check_index(x, idx, cfg)?;
    let b = cfg.bubble(idx.j as i64);
    Ok(z_of_bubble(x, &b, idx.ell, params.gamma_s, 1.0 + cfg.r[idx.j]))
}

/// Kernel of a single bubble; `one_plus_r` converts `d/dlambda` into `d/dr`.
pub fn z_of_bubble(x: &[f64], b: &Bubble, ell: usize, gamma: f64, one_plus_r: f64) -> f64 {
    let lam = b.lambda;
    let rho2 = dist2(x, &b.center);
    let den = lam * lam + rho2;
    let u = bubble_profile(lam, rho2, gamma);
    if ell == 0 {
        let du = gamma * u * (rho2 - lam * lam) / (lam * den);
        du * lam / one_plus_r
    } else {
        let d = x[ell - 1] - b.center[ell - 1];
        lam * 2.0 * gamma * u * d / den
    }
}

/// `f'(U_j) Z_{j,l}`.
pub fn cokernel_zbar(x: &[f64], idx: &KernelIndex, cfg: &TowerConfig, params: &ProblemParams) -> Result<f64> {
    let z = kernel_z(x, idx, cfg, params)?;
    let u = bubble_eval(x, &cfg.bubble(idx.j as i64), params);
    Ok(params.f_prime(u) * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_params;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p53() -> ProblemParams {
        derive_params(5, 1.5).unwrap()
    }

    fn e1(s: f64) -> Vec<f64> {
        vec![s, 0.0, 0.0, 0.0, 0.0]
    }

    #[test]
    fn bubble_basics() {
        let p = p53();
        let b = Bubble::new(1.0, vec![0.0; 5]).unwrap();
        assert_relative_eq!(bubble_eval(&[0.0; 5], &b, &p), 2.0, max_relative = 1e-15);
        let far = 1e4;
        let v = bubble_eval(&e1(far), &b, &p) * far.powf(5.0 - 3.0);
        assert_relative_eq!(v, 2.0, max_relative = 1e-7);
        let y = [0.0, 0.6, 0.0, 0.8, 0.0];
        assert_relative_eq!(bubble_eval(&e1(1.0), &b, &p), bubble_eval(&y, &b, &p), max_relative = 1e-15);
        assert!(Bubble::new(0.0, vec![0.0]).is_err());
    }

    #[test]
    fn ef_pairs() {
        let p = p53();
        for t in [-3.0, -0.4, 0.0, 1.1, 5.0] {
            let v = ef_forward(|r| u_sph(r, &p), t, &p);
            assert_relative_eq!(v, v_sph(t, &p), max_relative = 1e-13);
        }
        assert_relative_eq!(ef_forward(|r| u_sph(r, &p), 0.0, &p), 1.0, max_relative = 1e-15);
        let v = |t: f64| (0.3 * t).sin() + 2.0;
        for t in [-2.0, 0.1, 3.0] {
            let back = ef_forward(|r| ef_inverse(v, &e1(r), &p).unwrap(), t, &p);
            assert!((back - v(t)).abs() < 1e-12);
        }
        let a = 0.7;
        for t in [-1.0, 2.0] {
            assert_relative_eq!(ef_forward(|r| a * r.powf(-p.gamma_s), t, &p), a, max_relative = 1e-13);
        }
        assert!(ef_inverse(v, &[0.0; 5], &p).is_err());
    }

    #[test]
    fn tower_matches_ef_sum() {
        let p = p53();
        let cfg = TowerConfig::standard(0, vec![0.0; 5], 2.0, 1.0, 5).unwrap();
        for r in [0.02, 0.3, 0.9] {
            let x = e1(r);
            let t = -f64::ln(r);
            let lhs = ef_forward(|s| tower_eval(&e1(s), &cfg, true, &p), t, &p);
            let rhs: f64 = (0..=5).map(|j| (t - (1.0 + 2.0 * j as f64) * 2.0).cosh().powf(-p.gamma_s)).sum();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
            let _ = x;
        }
        let one = TowerConfig::standard(0, vec![0.0; 5], 2.0, 1.0, 0).unwrap();
        let x = e1(0.4);
        assert_relative_eq!(tower_eval(&x, &one, true, &p), bubble_eval(&x, &one.bubble(0), &p), max_relative = 1e-15);
    }

    #[test]
    fn truncation_tail() {
        let p = p53();
        let a = TowerConfig::standard(0, vec![0.0; 5], 1.5, 1.0, 2).unwrap();
        let b = TowerConfig::standard(0, vec![0.0; 5], 1.5, 1.0, 3).unwrap();
        let x = e1(1.0);
        let diff = tower_eval(&x, &b, true, &p) - tower_eval(&x, &a, true, &p);
        assert!(diff.abs() <= (2.0 * b.lambda(3)).powf(p.gamma_s));
        let j = TowerConfig::levels_for(2.0, 1.0, 1.0, 1e-14);
        assert!(TowerConfig::standard(0, vec![0.0; 5], 2.0, 1.0, j).unwrap().lambda(j as i64) < 1e-14);
    }

    #[test]
    fn admissibility_enforced() {
        let c = vec![0.0; 5];
        let bad = TowerConfig::new(0, c.clone(), 2.0, 1.0, vec![0.5, 0.0], vec![vec![0.0; 5]; 2], 0.5, 1.0);
        assert!(matches!(bad, Err(QcError::Inadmissible(_))));
        let ok = TowerConfig::new(0, c.clone(), 2.0, 1.0, vec![0.1, 0.001], vec![vec![0.0; 5]; 2], 0.5, 1.0);
        assert!(ok.is_ok());
        let lam0 = (-2.0f64).exp();
        let mut a = vec![vec![0.0; 5]; 2];
        a[0][0] = 2.0 * lam0 * lam0;
        assert!(TowerConfig::new(0, c, 2.0, 1.0, vec![0.0, 0.0], a, 0.5, 1.0).is_err());
    }

    fn sample_cfg() -> TowerConfig {
        let lam0 = (-1.5f64).exp();
        let mut a = vec![vec![0.0; 5]; 3];
        a[0] = vec![0.3 * lam0 * lam0, -0.1 * lam0 * lam0, 0.0, 0.05 * lam0 * lam0, 0.0];
        TowerConfig::new(0, vec![0.1, 0.0, -0.2, 0.0, 0.0], 1.5, 1.3, vec![0.05, -0.01, 0.0], a, 0.3, 1.0).unwrap()
    }

    #[test]
    fn translation_mode_vanishes_at_center() {
        let p = p53();
        let cfg = sample_cfg();
        let c = cfg.level_center(0);
        for ell in 1..=5 {
            let idx = KernelIndex { i: 0, j: 0, ell };
            assert_eq!(kernel_z(&c, &idx, &cfg, &p).unwrap(), 0.0);
            assert_eq!(cokernel_zbar(&c, &idx, &cfg, &p).unwrap(), 0.0);
        }
        assert!(kernel_z(&c, &KernelIndex { i: 1, j: 0, ell: 0 }, &cfg, &p).is_err());
        assert!(kernel_z(&c, &KernelIndex { i: 0, j: 9, ell: 0 }, &cfg, &p).is_err());
    }

    #[test]
    fn far_field_bounds() {
        let p = p53();
        let cfg = sample_cfg();
        for j in 0..=2usize {
            let lam = cfg.lambda(j as i64);
            for s in [1.0, 3.0, 10.0, 50.0] {
                let x = e1(s);
                let idx = KernelIndex { i: 0, j, ell: 0 };
                let z = kernel_z(&x, &idx, &cfg, &p).unwrap().abs();
                let zb = cokernel_zbar(&x, &idx, &cfg, &p).unwrap().abs();
                assert!(z <= 4.0 * s.powf(-2.0 * p.gamma_s) * lam.powf(p.gamma_s));
                assert!(zb <= 1e3 * s.powf(-(5.0 + 3.0)) * lam.powf(p.gamma_s));
            }
        }
    }

    fn perturbed(cfg: &TowerConfig, j: usize, ell: usize, h: f64) -> TowerConfig {
        let mut c = cfg.clone();
        if ell == 0 {
            c.r[j] += h;
        } else {
            c.a[j][ell - 1] += h;
        }
        c
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn kernels_match_finite_differences(
            j in 0usize..3,
            ell in 0usize..6,
            x in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            let p = p53();
            let cfg = sample_cfg();
            let idx = KernelIndex { i: 0, j, ell };
            let z = kernel_z(&x, &idx, &cfg, &p).unwrap();
            let lam = cfg.lambda(j as i64);
            let h = if ell == 0 { 1e-5 } else { 1e-5 * lam };
            let up = bubble_eval(&x, &perturbed(&cfg, j, ell, h).bubble(j as i64), &p);
            let dn = bubble_eval(&x, &perturbed(&cfg, j, ell, -h).bubble(j as i64), &p);
            let mut fd = (up - dn) / (2.0 * h);
            if ell > 0 {
                // d/da_l shifts the center, so dU/dx_l = -dU/da_l
                fd *= lam;
            }
            let scale = bubble_eval(&cfg.level_center(j as i64), &cfg.bubble(j as i64), &p);
            prop_assert!((z - fd).abs() <= 1e-6 * scale.max(z.abs()), "z {} fd {}", z, fd);
            let zb = cokernel_zbar(&x, &idx, &cfg, &p).unwrap();
            prop_assert!(zb * z >= 0.0);
        }
    }
}
