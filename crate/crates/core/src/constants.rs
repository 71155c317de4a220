//! Exponents and Gamma-function constants derived from `(n, sigma)`.

use crate::error::{QcError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(x: f64) -> f64 {
    let mut s = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    s
}

/// Gamma function on the positive axis.
pub fn gamma_fn(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(QcError::InvalidArgument(format!("gamma_fn requires z > 0, got {z}")));
    }
    Ok(gamma_pos(z))
}

fn gamma_pos(z: f64) -> f64 {
    if z < 0.5 {
        return PI / ((PI * z).sin() * gamma_pos(1.0 - z));
    }
    if z > 140.0 {
        return ln_gamma_pos(z).exp();
    }
    let x = z - 1.0;
    let w = x + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * w.powf(x + 0.5) * (-w).exp() * lanczos_sum(x)
}

/// Natural log of Gamma on the positive axis.
pub fn ln_gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(QcError::InvalidArgument(format!("ln_gamma requires z > 0, got {z}")));
    }
    Ok(ln_gamma_pos(z))
}

fn ln_gamma_pos(z: f64) -> f64 {
    if z < 0.5 {
        return (PI / (PI * z).sin()).ln() - ln_gamma_pos(1.0 - z);
    }
    let x = z - 1.0;
    let w = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * w.ln() - w + lanczos_sum(x).ln()
}

/// Surface measure of the unit k-sphere in R^{k+1}.
pub fn sphere_area(k: usize) -> f64 {
    let a = (k as f64 + 1.0) / 2.0;
    2.0 * PI.powf(a) / gamma_pos(a)
}

/// Rising factorial (a)_k.
pub fn pochhammer(a: f64, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (a + i as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub n: usize,
    pub sigma: f64,
    pub m: usize,
    pub s: f64,
    pub gamma_s: f64,
    pub gamma_s_dual: f64,
    pub crit_exp: f64,
    pub nonlin_exp: f64,
    pub c_ns: f64,
    pub q_ns: f64,
}

/// Derives all exponents and constants. Accepts any `0 < sigma < n/2`;
/// use [`derive_params_strict`] to enforce `sigma > 1`.
pub fn derive_params(n: usize, sigma: f64) -> Result<ProblemParams> {
    if n < 2 {
        return Err(QcError::InvalidParams(format!("dimension n = {n} must be at least 2")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(QcError::InvalidParams(format!("order sigma = {sigma} must be positive")));
    }
    let nf = n as f64;
    if nf <= 2.0 * sigma {
        return Err(QcError::InvalidParams(format!(
            "n = {n} must exceed 2 sigma = {}",
            2.0 * sigma
        )));
    }
    let m = sigma.floor() as usize;
    let s = sigma - m as f64;
    let gamma_s = (nf - 2.0 * sigma) / 2.0;
    let gamma_s_dual = (nf + 2.0 * sigma) / 2.0;
    let g1 = gamma_pos((nf + 2.0 * sigma) / 4.0);
    let g2 = gamma_pos((nf - 2.0 * sigma) / 4.0);
    let c_ns = 4f64.powf(sigma) * (g1 / g2).powi(2);
    let q_ns = gamma_pos(gamma_s_dual) / gamma_pos(gamma_s);
    Ok(ProblemParams {
        n,
        sigma,
        m,
        s,
        gamma_s,
        gamma_s_dual,
        crit_exp: 2.0 * nf / (nf - 2.0 * sigma),
        nonlin_exp: (nf + 2.0 * sigma) / (nf - 2.0 * sigma),
        c_ns,
        q_ns,
    })
}

/// Like [`derive_params`] but rejects `sigma <= 1` unless `allow_low_order`.
pub fn derive_params_strict(n: usize, sigma: f64, allow_low_order: bool) -> Result<ProblemParams> {
    let p = derive_params(n, sigma)?;
    if sigma <= 1.0 && !allow_low_order {
        return Err(QcError::InvalidParams(format!(
            "sigma = {sigma} <= 1 requires allow_low_order"
        )));
    }
    Ok(p)
}

impl ProblemParams {
    /// Riesz normalization C_{n,sigma} so that the potential inverts (-Delta)^sigma.
    pub fn riesz_const(&self) -> f64 {
        let nf = self.n as f64;
        gamma_pos(self.gamma_s) / (4f64.powf(self.sigma) * PI.powf(nf / 2.0) * gamma_pos(self.sigma))
    }

    /// Scale factor in front of the Riesz and cylindrical kernels, chosen so
    /// that the standard bubble is a fixed point of `u -> kappa * K * (c u^p)`.
    pub fn kernel_scale(&self) -> f64 {
        self.riesz_const() * self.q_ns / self.c_ns
    }

    /// |S^{n-2}|.
    pub fn omega_n2(&self) -> f64 {
        sphere_area(self.n - 2)
    }

    /// |S^{n-1}|.
    pub fn omega_n1(&self) -> f64 {
        sphere_area(self.n - 1)
    }

    /// Gegenbauer index (n-2)/2 for zonal harmonics on S^{n-1}.
    pub fn gegenbauer_lambda(&self) -> f64 {
        (self.n as f64 - 2.0) / 2.0
    }

    pub fn f(&self, u: f64) -> f64 {
        if u > 0.0 {
            self.c_ns * u.powf(self.nonlin_exp)
        } else {
            0.0
        }
    }

    pub fn f_prime(&self, u: f64) -> f64 {
        if u > 0.0 {
            self.c_ns * self.nonlin_exp * u.powf(self.nonlin_exp - 1.0)
        } else {
            0.0
        }
    }

    /// f(d + w) - f(d) for d > 0 without cancellation when |w| << d.
    pub fn f_increment(&self, d: f64, w: f64) -> f64 {
        let x = w / d;
        if x <= -1.0 {
            return -self.f(d);
        }
        self.f(d) * (self.nonlin_exp * x.ln_1p()).exp_m1()
    }

    /// f(u0 + w) - f(u0) - f'(u0) w for u0 > 0.
    pub fn f_taylor_remainder(&self, u0: f64, w: f64) -> f64 {
        let p = self.nonlin_exp;
        let x = w / u0;
        let base = self.f(u0);
        if x <= -1.0 {
            return -base - self.f_prime(u0) * w;
        }
        if x.abs() < 1e-3 {
            let mut term = p * (p - 1.0) / 2.0 * x * x;
            let mut sum = term;
            for k in 3..8 {
                term *= (p - (k as f64 - 1.0)) / k as f64 * x;
                sum += term;
            }
            return base * sum;
        }
        base * ((p * x.ln_1p()).exp_m1() - p * x)
    }
}
