//! JSON run configuration. Every block has defaults so a config only needs
//! `n` and `sigma`; unknown keys are rejected.

use qcurv_core::assembler::WeightKind;
use qcurv_core::kernels::KernelKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub sigma: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub kernel: KernelCfg,
    #[serde(default)]
    pub delaunay: DelaunayCfg,
    #[serde(default)]
    pub constants: ConstantsCfg,
    #[serde(default)]
    pub balance: BalanceCfg,
    #[serde(default)]
    pub assemble: AssembleCfg,
    #[serde(default)]
    pub toda: TodaCfg,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_seed() -> u64 {
    20_240_601
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelCfg {
    pub kind: KernelKind,
    pub t_min: f64,
    pub t_max: f64,
    pub h: f64,
    /// Window for the decay-rate fit.
    pub fit: [f64; 2],
}

impl Default for KernelCfg {
    fn default() -> Self {
        Self { kind: KernelKind::Riesz, t_min: 0.0, t_max: 16.0, h: 0.05, fit: [8.0, 16.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelaunayCfg {
    pub l_list: Vec<f64>,
    pub m: usize,
}

impl Default for DelaunayCfg {
    fn default() -> Self {
        Self { l_list: vec![2.5, 3.0, 3.5, 4.0], m: 800 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsCfg {
    pub psi_ell: Vec<f64>,
    pub oracle: bool,
}

impl Default for ConstantsCfg {
    fn default() -> Self {
        Self { psi_ell: (0..=24).map(|k| 0.5 * k as f64).collect(), oracle: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstChoice {
    /// Closed-integral `A1, A2, A3`.
    Closed,
    /// `A1 = A2 = 1, A3 = -1`.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceCfg {
    pub points: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub l: f64,
    pub constants: ConstChoice,
}

fn two_points(n: usize) -> Vec<Vec<f64>> {
    let mut b = vec![0.0; n];
    b[0] = 3.0;
    vec![vec![0.0; n], b]
}

impl Default for BalanceCfg {
    fn default() -> Self {
        Self { points: Vec::new(), q: vec![1.0, 1.0], l: 3.0, constants: ConstChoice::Closed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssembleCfg {
    pub points: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub l: f64,
    /// Base radii; solved from the balancing law when absent.
    pub r: Option<Vec<f64>>,
    pub constants: ConstChoice,
    pub tau: f64,
    pub zeta1: Option<f64>,
    pub weight: WeightKind,
    pub near_per_point: usize,
    pub transition_per_point: usize,
    pub far: usize,
    pub far_radius: f64,
    pub spot_checks: usize,
    pub grid_m: usize,
}

impl Default for AssembleCfg {
    fn default() -> Self {
        Self {
            points: Vec::new(),
            q: vec![1.0, 1.0],
            l: 3.0,
            r: None,
            constants: ConstChoice::Unit,
            tau: 0.1,
            zeta1: None,
            weight: WeightKind::Residual,
            near_per_point: 40,
            transition_per_point: 12,
            far: 40,
            far_radius: 50.0,
            spot_checks: 2,
            grid_m: 800,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TodaChoice {
    Translation,
    Dilation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TodaCfg {
    pub kind: TodaChoice,
    pub period: f64,
    pub k: usize,
    pub tau: f64,
    /// Right-hand side; drawn uniformly from `[-1, 1]` with the run seed when absent.
    pub values: Option<Vec<f64>>,
}

impl Default for TodaCfg {
    fn default() -> Self {
        Self { kind: TodaChoice::Translation, period: 3.0, k: 200, tau: 0.3, values: None }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    /// Accepts a config object or a manifest written by a previous run.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(format!("malformed JSON: {e}")))?;
        let v = match v.get("config") {
            Some(inner) if v.get("config_sha256").is_some() => inner.clone(),
            _ => v,
        };
        let mut cfg: RunConfig = serde_json::from_value(v).map_err(|e| bad(format!("invalid config: {e}")))?;
        if cfg.balance.points.is_empty() {
            cfg.balance.points = two_points(cfg.n.max(1));
        }
        if cfg.assemble.points.is_empty() {
            cfg.assemble.points = two_points(cfg.n.max(1));
        }
        Ok(cfg)
    }

    pub fn validate_common(&self) -> Result<(), CliError> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(bad(format!("tol = {} must lie in (0, 1)", self.tol)));
        }
        Ok(())
    }

    pub fn validate_kernel(&self) -> Result<(), CliError> {
        let k = &self.kernel;
        if !(k.h > 0.0) || !(k.t_max > k.t_min) || k.t_min < 0.0 {
            return Err(bad("kernel: need 0 <= t_min < t_max and h > 0"));
        }
        if k.kind == KernelKind::Singular && k.t_min <= 0.0 {
            return Err(bad("kernel: the singular kernel needs t_min > 0"));
        }
        if !(k.fit[1] > k.fit[0]) {
            return Err(bad("kernel: fit window must be increasing"));
        }
        Ok(())
    }

    pub fn validate_points(&self, points: &[Vec<f64>], q: &[f64], l: f64, what: &str) -> Result<(), CliError> {
        if points.iter().any(|p| p.len() != self.n) {
            return Err(bad(format!("{what}: every point needs {} coordinates", self.n)));
        }
        if q.len() != points.len() || q.iter().any(|v| !(*v > 0.0)) {
            return Err(bad(format!("{what}: q needs one positive entry per point")));
        }
        if !(l > 1.0) {
            return Err(bad(format!("{what}: L = {l} must exceed 1")));
        }
        Ok(())
    }

    pub fn validate_toda(&self) -> Result<(), CliError> {
        let t = &self.toda;
        if t.k < 2 || !(t.tau > 0.0) || !(t.period > 0.0) {
            return Err(bad("toda: need k >= 2, tau > 0, period > 0"));
        }
        if let Some(v) = &t.values {
            if v.len() != t.k {
                return Err(bad(format!("toda: {} values given for k = {}", v.len(), t.k)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_json(r#"{"n": 5, "sigma": 1.5}"#).unwrap();
        assert_eq!(c.kernel.t_max, 16.0);
        assert_eq!(c.assemble.points.len(), 2);
        assert_eq!(c.assemble.points[1][0], 3.0);
        assert!(c.validate_kernel().is_ok());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_blocks() {
        assert!(matches!(RunConfig::from_json(r#"{"n": 5, "sigma": 1.5, "nope": 1}"#), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_json("{"), Err(CliError::Config(_))));
        let c = RunConfig::from_json(r#"{"n": 5, "sigma": 1.5, "kernel": {"kind": "Singular"}}"#).unwrap();
        assert!(c.validate_kernel().is_err());
        let c = RunConfig::from_json(r#"{"n": 5, "sigma": 1.5, "toda": {"k": 3, "values": [1.0]}}"#).unwrap();
        assert!(c.validate_toda().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let c = RunConfig::from_json(r#"{"n": 7, "sigma": 2.5, "seed": 9}"#).unwrap();
        let m = serde_json::json!({"config_sha256": "x", "config": c});
        assert_eq!(RunConfig::from_json(&m.to_string()).unwrap(), c);
    }
}
