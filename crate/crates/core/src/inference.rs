//! Sandwich covariance for the nonzero coefficients of a penalized fit.
//!
//! With `s` and `v` the mean and association active sets, all sums over
//! clusters and `n` the number of clusters:
//!
//! ```text
//! M   = [ H_ss + nΣ₁        0       ]
//!       [ H_vs          H_vv + nΣ₂  ]
//! cov = M⁻¹ V M⁻ᵀ
//! ```
//!
//! where `H_ss = Σ CᵀB⁻¹C`, `H_vs = Σ GᵀS⁻¹F`, `H_vv = Σ GᵀS⁻¹G`, `V` is the
//! score outer-product sum and `Σ` holds the LQA weights `p'_λ(|θ|)/|θ|`.
//! `F` and `G` are the full derivatives of `ζ` in `β` and `α`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::invert;
use crate::model::Dataset;
use crate::penalty::{lqa_weight, PenaltyConfig};
use crate::scores::hessian_blocks;
use crate::selection::FitResult;

#[derive(Debug, Clone)]
pub struct SandwichEstimate {
    /// Active mean indices, in the order they appear in `covariance`.
    pub mean_index: Vec<usize>,
    /// Active association indices, following the mean block.
    pub assoc_index: Vec<usize>,
    pub covariance: DMatrix<f64>,
    p: usize,
    q: usize,
}

impl SandwichEstimate {
    pub fn se(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// Standard errors laid out over all `p` mean coefficients; `None`
    /// where the coefficient is zero.
    pub fn se_beta(&self) -> Vec<Option<f64>> {
        self.expand(&self.mean_index, 0, self.p)
    }

    pub fn se_alpha(&self) -> Vec<Option<f64>> {
        self.expand(&self.assoc_index, self.mean_index.len(), self.q)
    }

    fn expand(&self, index: &[usize], offset: usize, len: usize) -> Vec<Option<f64>> {
        let se = self.se();
        let mut out = vec![None; len];
        for (k, &i) in index.iter().enumerate() {
            out[i] = Some(se[offset + k]);
        }
        out
    }
}

fn lqa_diag(values: &DVector<f64>, index: &[usize], cfg: &PenaltyConfig) -> Result<Vec<f64>> {
    index
        .iter()
        .map(|&i| {
            if cfg.is_penalized(i) {
                lqa_weight(values[i], cfg)
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

/// Covariance of the active coefficients of `fit`, evaluated at its estimate
/// with the penalty configurations it was fitted with.
pub fn sandwich_covariance(ds: &Dataset, fit: &FitResult) -> Result<SandwichEstimate> {
    const OP: &str = "inference::sandwich_covariance";
    let s = fit.mean_active();
    let v = fit.assoc_active();
    if s.is_empty() && v.is_empty() {
        return Err(Error::input(OP, "fit has no nonzero coefficients"));
    }
    let (p, q) = (ds.p(), ds.q());
    let n = ds.n_clusters() as f64;
    let hb = hessian_blocks(ds, &fit.params)?;
    let sigma_mean = lqa_diag(&fit.params.beta, &s, &fit.cfg_mean)?;
    let sigma_assoc = lqa_diag(&fit.params.alpha, &v, &fit.cfg_assoc)?;

    let (ks, kv) = (s.len(), v.len());
    let k = ks + kv;
    let mut bracket = DMatrix::zeros(k, k);
    for (a, &i) in s.iter().enumerate() {
        for (b, &j) in s.iter().enumerate() {
            bracket[(a, b)] = hb.h_bb[(i, j)];
        }
        bracket[(a, a)] += n * sigma_mean[a];
    }
    for (a, &i) in v.iter().enumerate() {
        for (b, &j) in s.iter().enumerate() {
            bracket[(ks + a, b)] = hb.h_ab[(i, j)];
        }
        for (b, &j) in v.iter().enumerate() {
            bracket[(ks + a, ks + b)] = hb.h_aa[(i, j)];
        }
        bracket[(ks + a, ks + a)] += n * sigma_assoc[a];
    }

    // Rows/columns of V for the active coordinates, association block offset by p.
    let picks: Vec<usize> = s.iter().copied().chain(v.iter().map(|&j| p + j)).collect();
    let mut meat = DMatrix::zeros(k, k);
    for (a, &i) in picks.iter().enumerate() {
        for (b, &j) in picks.iter().enumerate() {
            meat[(a, b)] = hb.v[(i, j)];
        }
    }

    let bread = invert(&bracket, OP, "penalized information bracket")?;
    let cov = &bread * meat * bread.transpose();
    let covariance = (&cov + cov.transpose()) * 0.5;
    if !covariance.iter().all(|x| x.is_finite()) {
        return Err(Error::domain(OP, "covariance has non-finite entries"));
    }
    Ok(SandwichEstimate {
        mean_index: s,
        assoc_index: v,
        covariance,
        p,
        q,
    })
}
