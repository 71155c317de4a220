//! Banded interaction operators along a tower and their explicit inverses.

use crate::error::{QcError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Level-indexed sequence with the weight `e^{(2j+1) tau}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSeq {
    /// `entries[j]` is the level-`j` value (length 1 for scalars).
    pub entries: Vec<Vec<f64>>,
    pub tau: f64,
}

impl WeightedSeq {
    pub fn scalar(values: Vec<f64>, tau: f64) -> Self {
        Self { entries: values.into_iter().map(|v| vec![v]).collect(), tau }
    }

    pub fn zeros(k: usize, dim: usize, tau: f64) -> Self {
        Self { entries: vec![vec![0.0; dim]; k], tau }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.len())
    }

    /// Component `c` across levels.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.entries.iter().map(|e| e[c]).collect()
    }
}

/// `max_j e^{(2j+1) tau} |b_j|_inf`.
pub fn weighted_norm(b: &WeightedSeq) -> f64 {
    b.entries
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let m = e.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            ((2 * j + 1) as f64 * b.tau).exp() * m
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TodaKind {
    Translation { period: f64 },
    Dilation,
}

/// Truncated operator with rows `-a_j + (1+e) a_{j+1} - e a_{j+2}`;
/// `e = e^{-2L}` for translations and `e = 1` for dilations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TodaOperator {
    pub kind: TodaKind,
    pub k: usize,
}

impl TodaOperator {
    pub fn translation(period: f64, k: usize) -> Self {
        Self { kind: TodaKind::Translation { period }, k }
    }

    pub fn dilation(k: usize) -> Self {
        Self { kind: TodaKind::Dilation, k }
    }

    pub fn ratio(&self) -> f64 {
        match self.kind {
            TodaKind::Translation { period } => (-2.0 * period).exp(),
            TodaKind::Dilation => 1.0,
        }
    }

    fn apply_scalar(&self, a: &[f64]) -> Vec<f64> {
        let e = self.ratio();
        let at = |i: usize| a.get(i).copied().unwrap_or(0.0);
        (0..a.len()).map(|j| -at(j) + (1.0 + e) * at(j + 1) - e * at(j + 2)).collect()
    }

    /// Explicit inverse `a_j = -sum_{k>=j} (sum_{s=0}^{k-j} e^s) b_k`.
    fn invert_scalar(&self, b: &[f64]) -> Vec<f64> {
        let e = self.ratio();
        let kk = b.len();
        let mut geo = vec![0.0; kk];
        let mut pow = 1.0;
        let mut acc = 0.0;
        for g in geo.iter_mut() {
            acc += pow;
            *g = acc;
            pow *= e;
        }
        (0..kk).map(|j| -(j..kk).map(|k| geo[k - j] * b[k]).sum::<f64>()).collect()
    }

    pub fn apply(&self, b: &WeightedSeq) -> Result<WeightedSeq> {
        self.check(b)?;
        Ok(self.componentwise(b, |s| self.apply_scalar(s)))
    }

    pub fn invert(&self, b: &WeightedSeq, tau: f64) -> Result<WeightedSeq> {
        self.check(b)?;
        if !(tau > 0.0) {
            return Err(QcError::InvalidArgument(format!("tau = {tau} must be positive")));
        }
        let mut out = self.componentwise(b, |s| self.invert_scalar(s));
        out.tau = tau;
        Ok(out)
    }

    fn check(&self, b: &WeightedSeq) -> Result<()> {
        if b.len() != self.k {
            return Err(QcError::DimensionMismatch { expected: self.k, got: b.len() });
        }
        Ok(())
    }

    fn componentwise<F: Fn(&[f64]) -> Vec<f64>>(&self, b: &WeightedSeq, f: F) -> WeightedSeq {
        let mut out = WeightedSeq::zeros(b.len(), b.dim(), b.tau);
        for c in 0..b.dim() {
            for (j, v) in f(&b.component(c)).into_iter().enumerate() {
                out.entries[j][c] = v;
            }
        }
        out
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let e = self.ratio();
        let k = self.k;
        DMatrix::from_fn(k, k, |i, j| {
            if j == i {
                -1.0
            } else if j == i + 1 {
                1.0 + e
            } else if j == i + 2 {
                -e
            } else {
                0.0
            }
        })
    }

    /// Dense LU solve of the truncated system, used as an oracle.
    pub fn dense_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let m = self.dense();
        let rhs = DVector::from_column_slice(b);
        m.lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .ok_or(QcError::IllConditioned(0.0))
    }

    /// Exact induced `l^inf_tau` norm of the inverse on the truncation.
    pub fn inverse_induced_norm(&self, tau: f64) -> f64 {
        let e = self.ratio();
        let kk = self.k;
        let mut best = 0.0f64;
        for j in 0..kk {
            let mut row = 0.0;
            let mut geo = 0.0;
            let mut pow = 1.0;
            for k in j..kk {
                geo += pow;
                pow *= e;
                row += geo * (-2.0 * (k - j) as f64 * tau).exp();
            }
            best = best.max(row);
        }
        best
    }
}
