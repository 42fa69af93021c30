//! GEE2 score vectors, their per-cluster pieces, and the derivative blocks
//! used by the solver and the sandwich variance.
//!
//! Mean score: `U_β = Σ Cᵢᵀ Bᵢ⁻¹ Aᵢ`. Association score: `U_α = Σ Gᵢᵀ Sᵢ⁻¹ Rᵢ`,
//! where `G = ∂ζ/∂αᵀ` includes the offset's dependence on `α`. Weighting by
//! the offset-fixed `T` instead gives a consistent but much less efficient
//! estimator, since pairs whose conditioning response is 0 get no weight.
//! Per-cluster terms are computed independently (in parallel for large
//! datasets) and always reduced sequentially in cluster order, so results
//! are bit-reproducible.

use log::{debug, trace};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{compute_moments, ClusterData, Dataset, MomentBundle, Params};

/// Clusters with a working covariance condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Condition numbers above this are counted as warnings.
pub const WARN_CONDITION: f64 = 1e8;

const PAR_MIN_CLUSTERS: usize = 256;
/// Smallest eigenvalue allowed in a cluster's working correlation matrix.
pub const CORRELATION_FLOOR: f64 = 1e-1;

/// Inverse of a cluster's working covariance.
#[derive(Debug, Clone)]
pub(crate) struct WorkingInverse {
    pub inv: DMatrix<f64>,
    /// 1-norm condition number of the matrix actually inverted.
    pub cond: f64,
    /// Set when the correlation eigenvalues had to be floored.
    pub repaired: bool,
}

/// Inverts `B`. Pairwise associations that are each valid can still be
/// jointly incompatible, leaving `B` indefinite or nearly singular along a
/// correlation direction. When the correlation matrix `D^-1/2 B D^-1/2` has
/// an eigenvalue below `CORRELATION_FLOOR`, those eigenvalues are raised to
/// the floor. The repair is continuous in `B` and leaves well-conditioned
/// matrices untouched. Near-singularity coming from the variances
/// themselves is still an error.
pub(crate) fn invert_working_cov(b: &DMatrix<f64>, cluster_id: &str) -> Result<WorkingInverse> {
    const OP: &str = "scores::mean_score";
    let n = b.nrows();
    let diag = b.diagonal();
    if diag.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::linalg(
            OP,
            format!("working covariance of cluster {cluster_id} has a non-positive variance"),
        ));
    }
    let scale = diag.map(|v| 1.0 / v.sqrt());
    let corr = DMatrix::from_fn(n, n, |i, j| b[(i, j)] * scale[i] * scale[j]);
    let shifted = &corr - DMatrix::identity(n, n) * CORRELATION_FLOOR;
    if shifted.cholesky().is_some() {
        if let Some(chol) = b.clone().cholesky() {
            return finish(b, chol.inverse(), false, cluster_id);
        }
    }
    let eig = SymmetricEigen::new(corr);
    if !eig.eigenvalues.iter().all(|v| v.is_finite()) {
        return Err(Error::linalg(
            OP,
            format!("working covariance of cluster {cluster_id} is not finite"),
        ));
    }
    trace!(
        "cluster {cluster_id}: working correlation eigenvalue {:.3e} floored",
        eig.eigenvalues.min()
    );
    let floored = eig.eigenvalues.map(|v| v.max(CORRELATION_FLOOR));
    let inner_inv =
        &eig.eigenvectors * DMatrix::from_diagonal(&floored.map(|v| 1.0 / v)) * eig.eigenvectors.transpose();
    let inner = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
    let sqrt_d = scale.map(|v| 1.0 / v);
    let repaired = DMatrix::from_fn(n, n, |i, j| inner[(i, j)] * sqrt_d[i] * sqrt_d[j]);
    let inv = DMatrix::from_fn(n, n, |i, j| inner_inv[(i, j)] * scale[i] * scale[j]);
    finish(&repaired, inv, true, cluster_id)
}

fn finish(b: &DMatrix<f64>, inv: DMatrix<f64>, repaired: bool, cluster_id: &str) -> Result<WorkingInverse> {
    let cond = one_norm(b) * one_norm(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::linalg(
            "scores::mean_score",
            format!("working covariance of cluster {cluster_id} is near-singular (condition {cond:.3e})"),
        ));
    }
    Ok(WorkingInverse { inv, cond, repaired })
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// One cluster's score and information contributions.
#[derive(Debug, Clone)]
pub struct ClusterContribution {
    pub u_beta: DVector<f64>,
    pub u_alpha: DVector<f64>,
    /// `CᵀB⁻¹C`
    pub d_beta: DMatrix<f64>,
    /// `GᵀS⁻¹G`
    pub d_alpha: DMatrix<f64>,
    pub clamp_events: usize,
    pub ill_conditioned: bool,
    /// The working correlation was floored for this cluster.
    pub covariance_repaired: bool,
}

fn assoc_part(mb: &MomentBundle) -> (DVector<f64>, DMatrix<f64>) {
    // S is diagonal: scale the rows of G by 1/s.
    let mut sinv_g = mb.g.clone();
    for (mut row, &s) in sinv_g.row_iter_mut().zip(mb.s_diag.iter()) {
        row /= s;
    }
    (sinv_g.tr_mul(&mb.r), mb.g.tr_mul(&sinv_g))
}

fn weighted_terms(mb: &MomentBundle, cluster_id: &str) -> Result<ClusterContribution> {
    let w = invert_working_cov(&mb.b, cluster_id)?;
    let binv_c = &w.inv * &mb.c;
    let u_beta = binv_c.tr_mul(&mb.a);
    let d_beta = mb.c.tr_mul(&binv_c);
    let (u_alpha, d_alpha) = assoc_part(mb);
    Ok(ClusterContribution {
        u_beta,
        u_alpha,
        d_beta,
        d_alpha,
        clamp_events: mb.clamp_events,
        ill_conditioned: w.cond > WARN_CONDITION,
        covariance_repaired: w.repaired,
    })
}

/// Association terms only; the mean parts are left at zero and `B` is
/// never inverted.
fn assoc_terms(mb: &MomentBundle) -> ClusterContribution {
    let p = mb.c.ncols();
    let (u_alpha, d_alpha) = assoc_part(mb);
    ClusterContribution {
        u_beta: DVector::zeros(p),
        u_alpha,
        d_beta: DMatrix::zeros(p, p),
        d_alpha,
        clamp_events: mb.clamp_events,
        ill_conditioned: false,
        covariance_repaired: false,
    }
}

pub fn cluster_contribution(cluster: &ClusterData, params: &Params) -> Result<ClusterContribution> {
    let mb = compute_moments(cluster, params)?;
    weighted_terms(&mb, &cluster.id)
}

/// Applies `f` to every cluster, preserving cluster order in the output.
pub(crate) fn map_clusters<T, F>(ds: &Dataset, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&ClusterData) -> Result<T> + Sync + Send,
{
    if ds.n_clusters() >= PAR_MIN_CLUSTERS {
        ds.clusters().par_iter().with_min_len(64).map(&f).collect()
    } else {
        ds.clusters().iter().map(f).collect()
    }
}

pub fn per_cluster_contributions(ds: &Dataset, params: &Params) -> Result<Vec<ClusterContribution>> {
    map_clusters(ds, |c| cluster_contribution(c, params))
}

/// Summed scores and information matrices for both stages.
#[derive(Debug, Clone)]
pub struct FisherTerms {
    pub u_beta: DVector<f64>,
    pub d_beta: DMatrix<f64>,
    pub u_alpha: DVector<f64>,
    pub d_alpha: DMatrix<f64>,
    pub clamp_events: usize,
    pub condition_warnings: usize,
    pub covariance_repairs: usize,
}

pub fn fisher_terms(ds: &Dataset, params: &Params) -> Result<FisherTerms> {
    Ok(accumulate(ds, per_cluster_contributions(ds, params)?))
}

/// `fisher_terms` restricted to the association block: `u_beta` and
/// `d_beta` are zero.
pub fn assoc_fisher_terms(ds: &Dataset, params: &Params) -> Result<FisherTerms> {
    let parts = map_clusters(ds, |c| Ok(assoc_terms(&compute_moments(c, params)?)))?;
    Ok(accumulate(ds, parts))
}

fn accumulate(ds: &Dataset, parts: Vec<ClusterContribution>) -> FisherTerms {
    let (p, q) = (ds.p(), ds.q());
    let mut acc = FisherTerms {
        u_beta: DVector::zeros(p),
        d_beta: DMatrix::zeros(p, p),
        u_alpha: DVector::zeros(q),
        d_alpha: DMatrix::zeros(q, q),
        clamp_events: 0,
        condition_warnings: 0,
        covariance_repairs: 0,
    };
    for part in &parts {
        acc.u_beta += &part.u_beta;
        acc.d_beta += &part.d_beta;
        acc.u_alpha += &part.u_alpha;
        acc.d_alpha += &part.d_alpha;
        acc.clamp_events += part.clamp_events;
        acc.condition_warnings += usize::from(part.ill_conditioned);
        acc.covariance_repairs += usize::from(part.covariance_repaired);
    }
    if acc.covariance_repairs > 0 {
        debug!(
            "{} clusters needed a working correlation repair",
            acc.covariance_repairs
        );
    }
    if acc.condition_warnings > 0 {
        debug!(
            "{} clusters with working covariance condition above {WARN_CONDITION:e}",
            acc.condition_warnings
        );
    }
    acc
}

/// A summed score and its per-cluster terms.
#[derive(Debug, Clone)]
pub struct ScoreSum {
    pub total: DVector<f64>,
    pub per_cluster: Vec<DVector<f64>>,
}

fn sum_vectors(parts: Vec<DVector<f64>>, len: usize) -> ScoreSum {
    let mut total = DVector::zeros(len);
    for v in &parts {
        total += v;
    }
    ScoreSum {
        total,
        per_cluster: parts,
    }
}

#[derive(Debug, Clone)]
pub struct ScorePair {
    pub u_beta: DVector<f64>,
    pub u_alpha: DVector<f64>,
    pub per_cluster_beta: Vec<DVector<f64>>,
    pub per_cluster_alpha: Vec<DVector<f64>>,
}

pub fn score_pair(ds: &Dataset, params: &Params) -> Result<ScorePair> {
    let parts = per_cluster_contributions(ds, params)?;
    let (betas, alphas): (Vec<_>, Vec<_>) = parts.into_iter().map(|c| (c.u_beta, c.u_alpha)).unzip();
    let b = sum_vectors(betas, ds.p());
    let a = sum_vectors(alphas, ds.q());
    Ok(ScorePair {
        u_beta: b.total,
        u_alpha: a.total,
        per_cluster_beta: b.per_cluster,
        per_cluster_alpha: a.per_cluster,
    })
}

/// `U_β = Σ Cᵢᵀ Bᵢ⁻¹ (Yᵢ − μᵢ)`.
pub fn mean_score(ds: &Dataset, params: &Params) -> Result<ScoreSum> {
    let parts = map_clusters(ds, |c| Ok(cluster_contribution(c, params)?.u_beta))?;
    Ok(sum_vectors(parts, ds.p()))
}

/// `U_α = Σ Gᵢᵀ Sᵢ⁻¹ Rᵢ`.
pub fn assoc_score(ds: &Dataset, params: &Params) -> Result<ScoreSum> {
    let parts = map_clusters(ds, |c| Ok(assoc_part(&compute_moments(c, params)?).0))?;
    Ok(sum_vectors(parts, ds.q()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coefficients {
    Mean,
    Assoc,
}

/// Central-difference `∂ζ/∂θᵀ` for one cluster, `θ` being `β` or `α`.
/// `ν` is re-solved at every perturbed point. The step is
/// `max(1e−6, 1e−6·|θ_l|)·step_scale`, shrunk tenfold once if a
/// perturbation leaves the feasible region.
fn zeta_jacobian(cluster: &ClusterData, params: &Params, which: Coefficients, step_scale: f64) -> Result<DMatrix<f64>> {
    const OP: &str = "scores::zeta_jacobian";
    let theta = match which {
        Coefficients::Mean => &params.beta,
        Coefficients::Assoc => &params.alpha,
    };
    let name = match which {
        Coefficients::Mean => "beta",
        Coefficients::Assoc => "alpha",
    };
    let m = cluster.n_pairs();
    let mut out = DMatrix::zeros(m, theta.len());
    if m == 0 {
        return Ok(out);
    }
    let zeta_at = |l: usize, delta: f64| -> Result<DVector<f64>> {
        let mut shifted = params.clone();
        match which {
            Coefficients::Mean => shifted.beta[l] += delta,
            Coefficients::Assoc => shifted.alpha[l] += delta,
        }
        Ok(compute_moments(cluster, &shifted)?.zeta)
    };
    for l in 0..theta.len() {
        let mut h = 1e-6_f64.max(1e-6 * theta[l].abs()) * step_scale;
        let mut attempt = 0;
        let (plus, minus) = loop {
            match (zeta_at(l, h), zeta_at(l, -h)) {
                (Ok(a), Ok(b)) => break (a, b),
                (Err(e), _) | (_, Err(e)) => {
                    if attempt == 0 {
                        attempt += 1;
                        h /= 10.0;
                    } else {
                        return Err(Error::domain(
                            OP,
                            format!(
                                "cluster {}: perturbation of {name}[{l}] left the feasible region: {e}",
                                cluster.id
                            ),
                        ));
                    }
                }
            }
        };
        out.set_column(l, &((plus - minus) / (2.0 * h)));
    }
    Ok(out)
}

/// Central-difference `F = ∂ζ/∂βᵀ` for one cluster (`m_i × p`); the
/// derivative flows through both `μ` and `ν`.
pub fn cluster_cross_jacobian(cluster: &ClusterData, params: &Params, step_scale: f64) -> Result<DMatrix<f64>> {
    zeta_jacobian(cluster, params, Coefficients::Mean, step_scale)
}

/// Central-difference `∂ζ/∂αᵀ` for one cluster (`m_i × q`), a check on the
/// analytic `G` of [`MomentBundle`].
pub fn cluster_assoc_jacobian(cluster: &ClusterData, params: &Params, step_scale: f64) -> Result<DMatrix<f64>> {
    zeta_jacobian(cluster, params, Coefficients::Assoc, step_scale)
}

pub fn cross_jacobian_f(ds: &Dataset, params: &Params) -> Result<Vec<DMatrix<f64>>> {
    map_clusters(ds, |c| cluster_cross_jacobian(c, params, 1.0))
}

/// Empirical Hessian blocks and score outer products.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    /// `Σ CᵀB⁻¹C` (`p × p`)
    pub h_bb: DMatrix<f64>,
    /// `Σ GᵀS⁻¹F` (`q × p`)
    pub h_ab: DMatrix<f64>,
    /// `Σ GᵀS⁻¹G` (`q × q`)
    pub h_aa: DMatrix<f64>,
    /// `Σ (U_iβ; U_iα)(U_iβ; U_iα)ᵀ` (`(p+q) × (p+q)`)
    pub v: DMatrix<f64>,
}

pub fn hessian_blocks(ds: &Dataset, params: &Params) -> Result<HessianBlocks> {
    let (p, q) = (ds.p(), ds.q());
    let parts = map_clusters(ds, |cluster| {
        let mb = compute_moments(cluster, params)?;
        let w = weighted_terms(&mb, &cluster.id)?;
        let f = cluster_cross_jacobian(cluster, params, 1.0)?;
        let mut sinv_g = mb.g.clone();
        for (mut row, &s) in sinv_g.row_iter_mut().zip(mb.s_diag.iter()) {
            row /= s;
        }
        let h_ab = sinv_g.tr_mul(&f);
        let h_aa = sinv_g.tr_mul(&mb.g);
        let mut score = DVector::zeros(p + q);
        score.rows_mut(0, p).copy_from(&w.u_beta);
        score.rows_mut(p, q).copy_from(&w.u_alpha);
        Ok((w.d_beta, h_ab, h_aa, score))
    })?;
    let mut out = HessianBlocks {
        h_bb: DMatrix::zeros(p, p),
        h_ab: DMatrix::zeros(q, p),
        h_aa: DMatrix::zeros(q, q),
        v: DMatrix::zeros(p + q, p + q),
    };
    for (h_bb, h_ab, h_aa, score) in &parts {
        out.h_bb += h_bb;
        out.h_ab += h_ab;
        out.h_aa += h_aa;
        out.v += score * score.transpose();
    }
    Ok(out)
}
