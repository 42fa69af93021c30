//! Data model and per-cluster probability algebra.
//!
//! A cluster holds `n_i` binary responses with a unit-level mean design
//! `x` (`n_i × p`) and a pair-level association design `z` (`m_i × q`,
//! `m_i = n_i(n_i − 1)/2`), whose rows follow the lexicographic pair order
//! `(0,1), (0,2), …, (n_i−2, n_i−1)`.
//!
//! The mean model is `logit μ_ij = x_ijᵀβ` and the association model is
//! `log φ_ijk = z_ijkᵀα` where `φ` is the marginal pairwise odds ratio.
//! Alternating logistic regression works with the conditional means
//! `ζ_ijk = P(Y_ij = 1 | Y_ik = y_ik)`, whose logit is
//! `(z_ijkᵀα)·y_ik + log[(μ_ij − ν_ijk) / (1 − μ_ij − μ_ik + ν_ijk)]`.

use log::trace;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Probabilities are kept inside `[PROB_FLOOR, 1 − PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;
/// Log odds ratios are clamped to `±LOG_ODDS_LIMIT` before exponentiation.
pub const LOG_ODDS_LIMIT: f64 = 700.0;

const INDEPENDENCE_TOL: f64 = 1e-10;
const ROOT_CHECK_TOL: f64 = 1e-8;

/// Lexicographic `(j, k)` pairs with `j < k` for a cluster of `n` units.
pub fn lexicographic_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 0..n {
        for k in (j + 1)..n {
            pairs.push((j, k));
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterData {
    pub id: String,
    pub unit_ids: Vec<String>,
    /// Responses stored as 0.0/1.0.
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub pairs: Vec<(usize, usize)>,
}

impl ClusterData {
    /// Builds a cluster with unit ids `"1".."n"`.
    pub fn new(id: impl Into<String>, y: &[u8], x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let unit_ids = (1..=y.len()).map(|u| u.to_string()).collect();
        Self::with_unit_ids(id, unit_ids, y, x, z)
    }

    pub fn with_unit_ids(
        id: impl Into<String>,
        unit_ids: Vec<String>,
        y: &[u8],
        x: DMatrix<f64>,
        z: DMatrix<f64>,
    ) -> Result<Self> {
        const OP: &str = "model::ClusterData";
        let id = id.into();
        let n = y.len();
        if n == 0 {
            return Err(Error::input(OP, format!("cluster {id} has no units")));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::input(OP, format!("cluster {id}: response {bad} is not binary")));
        }
        if unit_ids.len() != n {
            return Err(Error::input(
                OP,
                format!("cluster {id}: {} unit ids for {n} responses", unit_ids.len()),
            ));
        }
        if x.nrows() != n {
            return Err(Error::input(
                OP,
                format!("cluster {id}: x has {} rows, expected {n}", x.nrows()),
            ));
        }
        let pairs = lexicographic_pairs(n);
        if z.nrows() != pairs.len() {
            return Err(Error::input(
                OP,
                format!("cluster {id}: z has {} rows, expected {} pairs", z.nrows(), pairs.len()),
            ));
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input(OP, format!("cluster {id}: non-finite covariate")));
        }
        Ok(ClusterData {
            id,
            unit_ids,
            y: DVector::from_iterator(n, y.iter().map(|&v| f64::from(v))),
            x,
            z,
            pairs,
        })
    }

    pub fn n_units(&self) -> usize {
        self.y.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }
}

/// A collection of clusters sharing one mean design and one association design.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    clusters: Vec<ClusterData>,
    mean_names: Vec<String>,
    assoc_names: Vec<String>,
    intercept: bool,
}

impl Dataset {
    /// `intercept` records that column 0 of both designs is a constant
    /// column added on load (and dropped again on write).
    pub fn new(
        clusters: Vec<ClusterData>,
        mean_names: Vec<String>,
        assoc_names: Vec<String>,
        intercept: bool,
    ) -> Result<Self> {
        const OP: &str = "model::Dataset";
        if clusters.is_empty() {
            return Err(Error::input(OP, "dataset has no clusters"));
        }
        let (p, q) = (mean_names.len(), assoc_names.len());
        for c in &clusters {
            if c.x.ncols() != p {
                return Err(Error::input(
                    OP,
                    format!("cluster {}: x has {} columns, expected {p}", c.id, c.x.ncols()),
                ));
            }
            if c.z.ncols() != q {
                return Err(Error::input(
                    OP,
                    format!("cluster {}: z has {} columns, expected {q}", c.id, c.z.ncols()),
                ));
            }
        }
        Ok(Dataset {
            clusters,
            mean_names,
            assoc_names,
            intercept,
        })
    }

    /// Same designs and names, different clusters.
    pub fn with_clusters(&self, clusters: Vec<ClusterData>) -> Result<Self> {
        Dataset::new(
            clusters,
            self.mean_names.clone(),
            self.assoc_names.clone(),
            self.intercept,
        )
    }

    pub fn clusters(&self) -> &[ClusterData] {
        &self.clusters
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn p(&self) -> usize {
        self.mean_names.len()
    }

    pub fn q(&self) -> usize {
        self.assoc_names.len()
    }

    pub fn mean_names(&self) -> &[String] {
        &self.mean_names
    }

    pub fn assoc_names(&self) -> &[String] {
        &self.assoc_names
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn total_pairs(&self) -> usize {
        self.clusters.iter().map(ClusterData::n_pairs).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
}

impl Params {
    pub fn new(beta: DVector<f64>, alpha: DVector<f64>) -> Self {
        Params { beta, alpha }
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Params {
            beta: DVector::zeros(p),
            alpha: DVector::zeros(q),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().chain(self.alpha.iter()).all(|v| v.is_finite())
    }

    /// Largest absolute coordinate difference over both vectors.
    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        let db = (&self.beta - &other.beta).amax();
        let da = if self.alpha.is_empty() {
            0.0
        } else {
            (&self.alpha - &other.alpha).amax()
        };
        db.max(da)
    }
}

/// Everything the score equations need from one cluster at one parameter value.
#[derive(Debug, Clone)]
pub struct MomentBundle {
    pub mu: DVector<f64>,
    pub phi: DVector<f64>,
    pub nu: DVector<f64>,
    pub zeta: DVector<f64>,
    /// Offsets `log[(μ_j − ν)/(1 − μ_j − μ_k + ν)]`, one per pair.
    pub offset: DVector<f64>,
    /// `Y − μ`.
    pub a: DVector<f64>,
    /// `Y_j − ζ`, one per pair.
    pub r: DVector<f64>,
    /// Working covariance of `Y_i`.
    pub b: DMatrix<f64>,
    /// `ζ(1 − ζ)`.
    pub s_diag: DVector<f64>,
    /// `∂μ/∂βᵀ`.
    pub c: DMatrix<f64>,
    /// `∂ζ/∂αᵀ` with the offset held fixed.
    pub t: DMatrix<f64>,
    /// `∂ζ/∂αᵀ` including the offset's dependence on `α` through `ν`. This is
    /// the weight used in the association estimating equation.
    pub g: DMatrix<f64>,
    pub clamp_events: usize,
}

pub(crate) fn row_dot(m: &DMatrix<f64>, row: usize, v: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for col in 0..m.ncols() {
        acc += m[(row, col)] * v[col];
    }
    acc
}

/// Overflow-safe inverse logit clamped into `[PROB_FLOOR, 1 − PROB_FLOOR]`.
/// The flag reports whether the clamp was hit.
pub fn logistic_clamped(eta: f64) -> (f64, bool) {
    let p = if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    };
    if p < PROB_FLOOR {
        (PROB_FLOOR, true)
    } else if p > 1.0 - PROB_FLOOR {
        (1.0 - PROB_FLOOR, true)
    } else {
        (p, false)
    }
}

fn slice_dot(row: &[f64], coef: &DVector<f64>) -> f64 {
    assert_eq!(row.len(), coef.len(), "covariate/coefficient length mismatch");
    row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum()
}

/// `logit⁻¹(xᵀβ)`, clamped away from 0 and 1.
pub fn marginal_mean(x_row: &[f64], beta: &DVector<f64>) -> f64 {
    let (mu, clamped) = logistic_clamped(slice_dot(x_row, beta));
    if clamped {
        trace!("marginal_mean clamped to {mu}");
    }
    mu
}

fn clamp_log_odds(lp: f64) -> (f64, bool) {
    if lp > LOG_ODDS_LIMIT {
        (LOG_ODDS_LIMIT, true)
    } else if lp < -LOG_ODDS_LIMIT {
        (-LOG_ODDS_LIMIT, true)
    } else {
        (lp, false)
    }
}

/// `exp(zᵀα)`, with the exponent clamped to `±700`.
pub fn pairwise_odds_ratio(z_row: &[f64], alpha: &DVector<f64>) -> f64 {
    let (lp, clamped) = clamp_log_odds(slice_dot(z_row, alpha));
    if clamped {
        trace!("pairwise_odds_ratio exponent clamped to {lp}");
    }
    lp.exp()
}

/// Odds ratio of the 2×2 table with margins `mu_j`, `mu_k` and joint success `nu`.
pub fn table_odds_ratio(mu_j: f64, mu_k: f64, nu: f64) -> f64 {
    nu * (1.0 - mu_j - mu_k + nu) / ((mu_j - nu) * (mu_k - nu))
}

/// Fréchet bounds `(max(0, μ_j + μ_k − 1), min(μ_j, μ_k))` for the joint success probability.
pub fn frechet_bounds(mu_j: f64, mu_k: f64) -> (f64, f64) {
    ((mu_j + mu_k - 1.0).max(0.0), mu_j.min(mu_k))
}

/// Joint success probability `ν` of two binary variables with the given
/// margins and odds ratio.
pub fn solve_pair_prob(mu_j: f64, mu_k: f64, phi: f64) -> Result<f64> {
    const OP: &str = "model::solve_pair_prob";
    let interior = |m: f64| m > 0.0 && m < 1.0;
    if !interior(mu_j) || !interior(mu_k) || !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::domain(
            OP,
            format!("invalid inputs (mu_j={mu_j}, mu_k={mu_k}, phi={phi})"),
        ));
    }
    if (phi - 1.0).abs() <= INDEPENDENCE_TOL {
        return Ok(mu_j * mu_k);
    }
    let (lo, hi) = frechet_bounds(mu_j, mu_k);
    let target = phi.ln();
    // Cells computed exactly as the offset will compute them.
    let cells_positive =
        |nu: f64| nu > lo && nu < hi && mu_j - nu > 0.0 && mu_k - nu > 0.0 && 1.0 - mu_j - mu_k + nu > 0.0;
    let accept =
        |nu: f64| cells_positive(nu) && (table_odds_ratio(mu_j, mu_k, nu).ln() - target).abs() <= ROOT_CHECK_TOL;

    // Root of (φ−1)ν² − aν + φμ_jμ_k = 0 inside the bracket, written in the
    // cancellation-free form 2c / (a + √disc); a + √disc > 0 for every φ > 0.
    let a = 1.0 + (mu_j + mu_k) * (phi - 1.0);
    let disc = a * a - 4.0 * phi * (phi - 1.0) * mu_j * mu_k;
    if disc >= 0.0 {
        let nu = 2.0 * phi * mu_j * mu_k / (a + disc.sqrt());
        if accept(nu) {
            return Ok(nu);
        }
    }

    trace!("solve_pair_prob falling back to bisection (mu_j={mu_j}, mu_k={mu_k}, phi={phi})");
    // log odds ratio is increasing in ν across the open bracket.
    let (mut left, mut right) = (lo, hi);
    let mut collapsed = false;
    for _ in 0..2000 {
        let mid = 0.5 * (left + right);
        if mid <= left || mid >= right {
            collapsed = true;
            break;
        }
        // Near the Fréchet bounds a cell can round to zero; its side of the
        // bracket still says which way the root lies.
        if mid <= 0.0 || 1.0 - mu_j - mu_k + mid <= 0.0 {
            left = mid;
        } else if mu_j - mid <= 0.0 || mu_k - mid <= 0.0 {
            right = mid;
        } else if table_odds_ratio(mu_j, mu_k, mid).ln() < target {
            left = mid;
        } else {
            right = mid;
        }
    }
    // A collapsed bracket means ν is resolved to the last representable value.
    let nu = if right < hi { right } else { left };
    if cells_positive(nu) && (collapsed || (table_odds_ratio(mu_j, mu_k, nu).ln() - target).abs() <= 1e-6) {
        Ok(nu)
    } else {
        Err(Error::domain(
            OP,
            format!("no feasible root in ({lo}, {hi}) for (mu_j={mu_j}, mu_k={mu_k}, phi={phi})"),
        ))
    }
}

/// ALR offset `log[(μ_j − ν)/(1 − μ_j − μ_k + ν)]`.
pub fn alr_offset(mu_j: f64, mu_k: f64, nu: f64) -> Result<f64> {
    let num = mu_j - nu;
    let den = 1.0 - mu_j - mu_k + nu;
    if !(num > 0.0 && den > 0.0) {
        return Err(Error::domain(
            "model::conditional_mean_zeta",
            format!("offset cells not positive (mu_j={mu_j}, mu_k={mu_k}, nu={nu})"),
        ));
    }
    Ok((num / den).ln())
}

/// `P(Y_j = 1 | Y_k = y_k)` under the ALR parameterisation.
pub fn conditional_mean_zeta(
    mu_j: f64,
    mu_k: f64,
    nu: f64,
    z_row: &[f64],
    alpha: &DVector<f64>,
    y_k: f64,
) -> Result<f64> {
    let offset = alr_offset(mu_j, mu_k, nu)?;
    let (lp, _) = clamp_log_odds(slice_dot(z_row, alpha));
    Ok(logistic_clamped(lp * y_k + offset).0)
}

/// Marginal means of a cluster, with the number of clamped values.
pub(crate) fn cluster_means(cluster: &ClusterData, beta: &DVector<f64>) -> (DVector<f64>, usize) {
    let mut clamps = 0;
    let mu = DVector::from_fn(cluster.n_units(), |j, _| {
        let (m, c) = logistic_clamped(row_dot(&cluster.x, j, beta));
        clamps += usize::from(c);
        m
    });
    (mu, clamps)
}

/// The conditional means `ζ` of a cluster, recomputing `μ` and `ν` from scratch.
pub fn cluster_zeta(cluster: &ClusterData, params: &Params) -> Result<DVector<f64>> {
    Ok(compute_moments(cluster, params)?.zeta)
}

/// `−∂off/∂ψ` for `ψ = log φ`: `(1/p₁₀ + 1/p₀₀) / Σ_c 1/p_c`, written with
/// cell products so that a single empty cell does not produce `∞/∞`.
fn offset_slope(mu_j: f64, mu_k: f64, nu: f64) -> f64 {
    let (p11, p10, p01, p00) = (nu, mu_j - nu, mu_k - nu, 1.0 - mu_j - mu_k + nu);
    let e3 = p10 * p01 * p00 + p11 * p01 * p00 + p11 * p10 * p00 + p11 * p10 * p01;
    if e3 > 0.0 {
        (p10 + p00) * p11 * p01 / e3
    } else {
        0.0
    }
}

pub fn compute_moments(cluster: &ClusterData, params: &Params) -> Result<MomentBundle> {
    let n = cluster.n_units();
    let m = cluster.n_pairs();
    let p = cluster.x.ncols();
    let q = cluster.z.ncols();

    let (mu, mut clamp_events) = cluster_means(cluster, &params.beta);
    let a = &cluster.y - &mu;

    let mut b = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, p);
    for j in 0..n {
        let v = mu[j] * (1.0 - mu[j]);
        b[(j, j)] = v;
        for col in 0..p {
            c[(j, col)] = v * cluster.x[(j, col)];
        }
    }

    let mut phi = DVector::zeros(m);
    let mut nu = DVector::zeros(m);
    let mut zeta = DVector::zeros(m);
    let mut offset = DVector::zeros(m);
    let mut r = DVector::zeros(m);
    let mut s_diag = DVector::zeros(m);
    let mut t = DMatrix::zeros(m, q);
    let mut g = DMatrix::zeros(m, q);

    for (idx, &(j, k)) in cluster.pairs.iter().enumerate() {
        let (lp, lp_clamped) = clamp_log_odds(row_dot(&cluster.z, idx, &params.alpha));
        clamp_events += usize::from(lp_clamped);
        let ph = lp.exp();
        let pair_ctx = |e: Error| match e {
            Error::NumericalDomain { op, detail } => Error::NumericalDomain {
                op,
                detail: format!("cluster {}, pair ({}, {}): {detail}", cluster.id, j + 1, k + 1),
            },
            other => other,
        };
        let v = solve_pair_prob(mu[j], mu[k], ph).map_err(pair_ctx)?;
        let off = alr_offset(mu[j], mu[k], v).map_err(pair_ctx)?;
        let y_k = cluster.y[k];
        let (zt, clamped) = logistic_clamped(lp * y_k + off);
        clamp_events += usize::from(clamped);

        b[(j, k)] = v - mu[j] * mu[k];
        b[(k, j)] = b[(j, k)];
        phi[idx] = ph;
        nu[idx] = v;
        offset[idx] = off;
        zeta[idx] = zt;
        r[idx] = cluster.y[j] - zt;
        let w = zt * (1.0 - zt);
        s_diag[idx] = w;
        if y_k != 0.0 {
            for col in 0..q {
                t[(idx, col)] = w * cluster.z[(idx, col)] * y_k;
            }
        }
        if !lp_clamped {
            let slope = w * (y_k - offset_slope(mu[j], mu[k], v));
            for col in 0..q {
                g[(idx, col)] = slope * cluster.z[(idx, col)];
            }
        }
    }

    Ok(MomentBundle {
        mu,
        phi,
        nu,
        zeta,
        offset,
        a,
        r,
        b,
        s_diag,
        c,
        t,
        g,
        clamp_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ln2() -> f64 {
        2f64.ln()
    }

    #[test]
    fn marginal_mean_examples() {
        let beta = DVector::from_vec(vec![1.0]);
        assert_eq!(marginal_mean(&[0.0], &beta), 0.5);
        assert_abs_diff_eq!(marginal_mean(&[-1.6], &beta), 0.167982, epsilon = 1e-6);
        assert_eq!(marginal_mean(&[800.0], &beta), 1.0 - PROB_FLOOR);
        assert_eq!(marginal_mean(&[-800.0], &beta), PROB_FLOOR);
    }

    #[test]
    fn odds_ratio_examples() {
        let alpha = DVector::from_vec(vec![1.0]);
        assert_eq!(pairwise_odds_ratio(&[0.0], &alpha), 1.0);
        assert_abs_diff_eq!(pairwise_odds_ratio(&[0.693], &alpha), 1.999706, epsilon = 1e-6);
        assert_abs_diff_eq!(pairwise_odds_ratio(&[-0.5], &alpha), 0.606531, epsilon = 1e-6);
        assert!(pairwise_odds_ratio(&[1e5], &alpha).is_finite());
    }

    /// Independent bisection on the odds-ratio equation.
    fn bisect_nu(mu_j: f64, mu_k: f64, phi: f64) -> f64 {
        let (mut lo, mut hi) = frechet_bounds(mu_j, mu_k);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let or = mid * (1.0 - mu_j - mu_k + mid) / ((mu_j - mid) * (mu_k - mid));
            if or < phi {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn pair_prob_examples() {
        assert_eq!(solve_pair_prob(0.5, 0.5, 1.0).unwrap(), 0.25);
        let nu = solve_pair_prob(0.5, 0.5, 2.0).unwrap();
        assert_abs_diff_eq!(nu, bisect_nu(0.5, 0.5, 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(nu, 0.292893, epsilon = 1e-6);
        assert_abs_diff_eq!(nu * nu / (0.5 - nu).powi(2), 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(solve_pair_prob(0.9, 0.9, 1.0).unwrap(), 0.81, epsilon = 1e-15);
    }

    #[test]
    fn pair_prob_rejects_bad_inputs() {
        assert!(solve_pair_prob(0.0, 0.5, 2.0).is_err());
        assert!(solve_pair_prob(0.5, 1.0, 2.0).is_err());
        assert!(solve_pair_prob(0.5, 0.5, 0.0).is_err());
        assert!(solve_pair_prob(0.5, 0.5, f64::NAN).is_err());
    }

    #[test]
    fn pair_prob_extreme_odds_ratio() {
        for &phi in &[1e-8, 1e8, 1e15] {
            let nu = solve_pair_prob(0.3, 0.6, phi).unwrap();
            let (lo, hi) = frechet_bounds(0.3, 0.6);
            assert!(nu > lo && nu < hi);
        }
    }

    #[test]
    fn zeta_examples() {
        let nu = solve_pair_prob(0.5, 0.5, 2.0).unwrap();
        let alpha = DVector::from_vec(vec![ln2()]);
        let z1 = conditional_mean_zeta(0.5, 0.5, nu, &[1.0], &alpha, 1.0).unwrap();
        let z0 = conditional_mean_zeta(0.5, 0.5, nu, &[1.0], &alpha, 0.0).unwrap();
        assert_abs_diff_eq!(z1, 0.585786, epsilon = 1e-6);
        assert_abs_diff_eq!(z0, 0.414214, epsilon = 1e-6);
        assert_abs_diff_eq!(z1, nu / 0.5, epsilon = 1e-12);

        let zero = DVector::from_vec(vec![0.0]);
        for &(mj, mk) in &[(0.2, 0.7), (0.9, 0.1), (0.5, 0.5)] {
            let nu = solve_pair_prob(mj, mk, 1.0).unwrap();
            for yk in [0.0, 1.0] {
                let z = conditional_mean_zeta(mj, mk, nu, &[1.0], &zero, yk).unwrap();
                assert_abs_diff_eq!(z, mj, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zeta_rejects_infeasible_nu() {
        let alpha = DVector::from_vec(vec![0.0]);
        assert!(conditional_mean_zeta(0.5, 0.5, 0.6, &[1.0], &alpha, 1.0).is_err());
        assert!(conditional_mean_zeta(0.7, 0.7, 0.3, &[1.0], &alpha, 1.0).is_err());
    }

    #[test]
    fn extreme_odds_ratio_lands_on_the_nearest_feasible_table() {
        // The (0, 0) cell is far below the resolution of 1 − μ_j − μ_k.
        let (mu_j, mu_k, phi) = (0.058615014932039335, 0.9944627705869353, 1.6919821379059347e-16);
        let nu = solve_pair_prob(mu_j, mu_k, phi).unwrap();
        let (lo, _) = frechet_bounds(mu_j, mu_k);
        assert!(nu > lo && nu - lo < 1e-15);
        let off = alr_offset(mu_j, mu_k, nu).unwrap();
        assert!(off.is_finite() && off > 30.0);
        // The mirror image at the upper bound.
        let nu = solve_pair_prob(0.3, 0.4, 1e20).unwrap();
        assert!(nu < 0.3 && 0.3 - nu < 1e-15);
    }

    fn two_unit_cluster(y: &[u8]) -> ClusterData {
        ClusterData::new(
            "c1",
            y,
            DMatrix::from_element(2, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn moments_for_symmetric_pair() {
        let cluster = two_unit_cluster(&[1, 1]);
        let params = Params::new(DVector::from_vec(vec![0.0]), DVector::from_vec(vec![ln2()]));
        let mb = compute_moments(&cluster, &params).unwrap();
        assert_abs_diff_eq!(mb.b[(0, 1)], 0.042893, epsilon = 1e-6);
        assert_eq!(mb.b[(0, 1)], mb.b[(1, 0)]);
        assert_abs_diff_eq!(mb.b[(0, 0)], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(mb.r[0], 1.0 - 0.585786, epsilon = 1e-6);
    }

    #[test]
    fn independence_gives_diagonal_working_covariance() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 1.0, -0.4, 1.0, 2.0]);
        let z = DMatrix::from_element(3, 1, 1.0);
        let cluster = ClusterData::new("c", &[1, 0, 1], x, z).unwrap();
        let params = Params::new(DVector::from_vec(vec![0.2, -0.5]), DVector::zeros(1));
        let mb = compute_moments(&cluster, &params).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                if j == k {
                    assert_eq!(mb.b[(j, j)], mb.mu[j] * (1.0 - mb.mu[j]));
                } else {
                    assert_eq!(mb.b[(j, k)], 0.0);
                }
            }
        }
    }

    #[test]
    fn singleton_cluster_has_no_pair_terms() {
        let cluster = ClusterData::new("s", &[1], DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(0, 2)).unwrap();
        let params = Params::new(DVector::from_vec(vec![0.4]), DVector::zeros(2));
        let mb = compute_moments(&cluster, &params).unwrap();
        assert_eq!(mb.b.shape(), (1, 1));
        let mu = mb.mu[0];
        assert_abs_diff_eq!(mb.b[(0, 0)], mu * (1.0 - mu), epsilon = 1e-15);
        assert!(mb.zeta.is_empty() && mb.r.is_empty());
        assert_eq!(mb.t.shape(), (0, 2));
    }

    #[test]
    fn cluster_validation() {
        let x = DMatrix::zeros(2, 1);
        let z = DMatrix::zeros(1, 1);
        assert!(ClusterData::new("c", &[0, 2], x.clone(), z.clone()).is_err());
        assert!(ClusterData::new("c", &[0, 1, 1], x.clone(), z.clone()).is_err());
        assert!(ClusterData::new("c", &[0, 1], x, DMatrix::zeros(2, 1)).is_err());
        assert!(ClusterData::new("c", &[], DMatrix::zeros(0, 1), DMatrix::zeros(0, 1)).is_err());
    }

    #[test]
    fn clamp_events_are_counted() {
        let cluster = two_unit_cluster(&[1, 0]);
        let x = DMatrix::from_element(2, 1, 1.0);
        let cluster = ClusterData { x, ..cluster };
        let params = Params::new(DVector::from_vec(vec![800.0]), DVector::from_vec(vec![0.0]));
        // μ clamps on both units; the pair solve then sits on the Fréchet boundary.
        let res = compute_moments(&cluster, &params);
        match res {
            Ok(mb) => assert!(mb.clamp_events >= 2),
            Err(e) => assert!(matches!(e, Error::NumericalDomain { .. })),
        }
    }

    #[test]
    fn lexicographic_pair_order() {
        assert_eq!(
            lexicographic_pairs(4),
            vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        );
        assert!(lexicographic_pairs(1).is_empty());
    }
}
