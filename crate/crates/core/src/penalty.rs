//! Penalty derivatives and thresholding primitives.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PenaltyKind {
    None,
    Lasso,
    Scad,
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyKind::None => "none",
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::Scad => "scad",
        })
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(PenaltyKind::None),
            "lasso" => Ok(PenaltyKind::Lasso),
            "scad" => Ok(PenaltyKind::Scad),
            other => Err(Error::config(
                "penalty::PenaltyKind",
                format!("unknown penalty '{other}'"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub lambda: f64,
    /// SCAD concavity; ignored by the other kinds.
    pub a: f64,
    /// Coefficient indices that are never penalized (intercepts).
    pub exclude: BTreeSet<usize>,
}

impl PenaltyConfig {
    pub fn new(kind: PenaltyKind, lambda: f64) -> Result<Self> {
        let cfg = PenaltyConfig {
            kind,
            lambda,
            a: DEFAULT_SCAD_A,
            exclude: BTreeSet::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn none() -> Self {
        PenaltyConfig {
            kind: PenaltyKind::None,
            lambda: 0.0,
            a: DEFAULT_SCAD_A,
            exclude: BTreeSet::new(),
        }
    }

    pub fn with_a(mut self, a: f64) -> Result<Self> {
        self.a = a;
        self.validate()?;
        Ok(self)
    }

    pub fn excluding(mut self, indices: impl IntoIterator<Item = usize>) -> Self {
        self.exclude.extend(indices);
        self
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        PenaltyConfig { lambda, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "penalty::PenaltyConfig";
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(
                OP,
                format!("lambda must be a finite nonnegative number, got {}", self.lambda),
            ));
        }
        if self.kind == PenaltyKind::Scad && !(self.a > 2.0) {
            return Err(Error::config(OP, format!("SCAD requires a > 2, got {}", self.a)));
        }
        Ok(())
    }

    pub fn is_penalized(&self, index: usize) -> bool {
        self.kind != PenaltyKind::None && !self.exclude.contains(&index)
    }

    /// Penalty derivative for coefficient `index`, honouring `exclude`.
    pub fn derivative_at(&self, index: usize, theta: f64) -> f64 {
        if self.is_penalized(index) {
            penalty_derivative(theta, self)
        } else {
            0.0
        }
    }
}

/// `p'_λ(θ)` for `θ ≥ 0`. SCAD follows
/// `λ{ I(θ ≤ λ) + (aλ − θ)₊ / ((a − 1)λ) · I(θ > λ) }`.
pub fn penalty_derivative(theta: f64, cfg: &PenaltyConfig) -> f64 {
    debug_assert!(theta >= 0.0, "penalty derivative needs a nonnegative argument");
    let lambda = cfg.lambda;
    match cfg.kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Lasso => lambda,
        PenaltyKind::Scad => {
            if lambda == 0.0 {
                0.0
            } else if theta <= lambda {
                lambda
            } else {
                (cfg.a * lambda - theta).max(0.0) / (cfg.a - 1.0)
            }
        }
    }
}

/// `sign(z)(|z| − t)₊`; the dead zone `|z| ≤ t` is closed.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Local quadratic weight `p'_λ(|θ̂|)/|θ̂|` for an active coefficient.
pub fn lqa_weight(theta_hat: f64, cfg: &PenaltyConfig) -> Result<f64> {
    if theta_hat == 0.0 {
        return Err(Error::input(
            "penalty::lqa_weight",
            "weight requested for a zero coefficient; restrict to the active set",
        ));
    }
    let t = theta_hat.abs();
    Ok(penalty_derivative(t, cfg) / t)
}
