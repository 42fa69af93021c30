//! Two-stage hierarchical penalized estimation.
//!
//! Stage 1 solves the penalized mean equations with `α` frozen at the ALR
//! estimate; stage 2 solves the penalized association equations with `β`
//! frozen at the stage-1 result. Each stage is an outer Fisher-scoring loop
//! around an inner coordinate-descent solve of a weighted-L1 least squares
//! problem, with the penalty linearised (one-step LLA) at the previous outer
//! iterate.
//!
//! For the mean stage the inner problem is
//!
//! ```text
//! minimise ½ (Z − Cθ)ᵀ B⁻¹ (Z − Cθ) + Σ_l t_l |θ_l|,   Z = Cβ_t + A,
//! t_l = n · p'_λ(|β_t,l|)
//! ```
//!
//! which, in terms of `u = CᵀB⁻¹A` and `D = CᵀB⁻¹C`, is
//! `½θᵀDθ − (u + Dβ_t)ᵀθ + Σ t_l|θ_l|`. The association stage is the same
//! with `(u*, D*) = (GᵀS⁻¹R, GᵀS⁻¹G)`.

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::alr::{fit_alr, AlrFit, DEFAULT_MAX_OUTER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::model::{compute_moments, Dataset, Params};
use crate::penalty::{soft_threshold, PenaltyConfig, PenaltyKind};
use crate::scores::{assoc_fisher_terms, fisher_terms, invert_working_cov};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeKind {
    /// Select mean covariates; association model taken as given.
    MeanOnly,
    /// Select association covariates; mean model taken as given.
    AssocOnly,
    /// Select both, mean first.
    Joint,
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeKind::MeanOnly => "mean",
            ModeKind::AssocOnly => "assoc",
            ModeKind::Joint => "joint",
        })
    }
}

impl FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" | "mean_only" => Ok(ModeKind::MeanOnly),
            "assoc" | "assoc_only" => Ok(ModeKind::AssocOnly),
            "joint" => Ok(ModeKind::Joint),
            other => Err(Error::config(
                "selection::AnalysisMode",
                format!("unknown mode '{other}'"),
            )),
        }
    }
}

/// "If mean coefficient `mean_index` is zero, the association coefficients
/// in `assoc_indices` are zero too."
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub mean_index: usize,
    pub assoc_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisMode {
    pub kind: ModeKind,
    pub constraints: Vec<Constraint>,
}

impl AnalysisMode {
    pub fn new(kind: ModeKind) -> Self {
        AnalysisMode {
            kind,
            constraints: Vec::new(),
        }
    }

    pub fn mean_only() -> Self {
        Self::new(ModeKind::MeanOnly)
    }

    pub fn assoc_only() -> Self {
        Self::new(ModeKind::AssocOnly)
    }

    pub fn joint() -> Self {
        Self::new(ModeKind::Joint)
    }

    pub fn with_constraints(mut self, constraints: Vec<Constraint>) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        const OP: &str = "selection::AnalysisMode";
        if !self.constraints.is_empty() && self.kind != ModeKind::Joint {
            return Err(Error::config(OP, "constraints are only meaningful in joint mode"));
        }
        for c in &self.constraints {
            if c.mean_index >= p {
                return Err(Error::config(
                    OP,
                    format!("constraint mean index {} out of range (p = {p})", c.mean_index),
                ));
            }
            if let Some(&bad) = c.assoc_indices.iter().find(|&&a| a >= q) {
                return Err(Error::config(
                    OP,
                    format!("constraint association index {bad} out of range (q = {q})"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            inner_tol: 1e-8,
            max_outer: DEFAULT_MAX_OUTER,
            max_sweeps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub estimate: DVector<f64>,
    /// Indices of the exact nonzeros.
    pub active_set: Vec<usize>,
    pub inner_sweeps: usize,
    pub outer_iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

fn active_indices(v: &DVector<f64>) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// An association coefficient forced to zero because its linked mean
/// coefficient was zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintEvent {
    pub mean_index: usize,
    pub assoc_index: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub mode: AnalysisMode,
    pub params: Params,
    pub alr: AlrFit,
    pub mean_stage: Option<StageResult>,
    pub assoc_stage: Option<StageResult>,
    pub constraint_log: Vec<ConstraintEvent>,
    pub cfg_mean: PenaltyConfig,
    pub cfg_assoc: PenaltyConfig,
    pub n_clusters: usize,
}

impl FitResult {
    pub fn mean_active(&self) -> Vec<usize> {
        active_indices(&self.params.beta)
    }

    pub fn assoc_active(&self) -> Vec<usize> {
        active_indices(&self.params.alpha)
    }

    pub fn converged(&self) -> bool {
        self.alr.diagnostics.converged
            && self.mean_stage.as_ref().is_none_or(|s| s.converged)
            && self.assoc_stage.as_ref().is_none_or(|s| s.converged)
    }
}

/// Stacked working regression for the mean stage.
#[derive(Debug, Clone)]
pub struct WorkingResponse {
    /// `Z = Cβ_t + A`
    pub z: DVector<f64>,
    pub c: DMatrix<f64>,
    /// Per-cluster `B_i⁻¹`; the full weight is block diagonal.
    pub weights: Vec<DMatrix<f64>>,
    pub u: DVector<f64>,
    pub d: DMatrix<f64>,
}

impl WorkingResponse {
    /// Unpenalized weighted least squares fit of `Z` on `C`.
    pub fn wls_solution(&self) -> Result<DVector<f64>> {
        let p = self.c.ncols();
        let mut cwz = DVector::zeros(p);
        let mut row = 0;
        for w in &self.weights {
            let n = w.nrows();
            let c_i = self.c.rows(row, n);
            let z_i = self.z.rows(row, n);
            cwz += c_i.transpose() * (w * z_i);
            row += n;
        }
        solve_spd(&self.d, &cwz, "selection::working_response", "C'B^-1C")
    }
}

pub fn working_response(ds: &Dataset, beta_t: &DVector<f64>, alpha_fixed: &DVector<f64>) -> Result<WorkingResponse> {
    let params = Params::new(beta_t.clone(), alpha_fixed.clone());
    let p = ds.p();
    let total: usize = ds.clusters().iter().map(|c| c.n_units()).sum();
    let mut z = DVector::zeros(total);
    let mut c = DMatrix::zeros(total, p);
    let mut weights = Vec::with_capacity(ds.n_clusters());
    let mut u = DVector::zeros(p);
    let mut d = DMatrix::zeros(p, p);
    let mut row = 0;
    for cluster in ds.clusters() {
        let mb = compute_moments(cluster, &params)?;
        let b_inv = invert_working_cov(&mb.b, &cluster.id)?.inv;
        let n = cluster.n_units();
        let z_i = &mb.c * beta_t + &mb.a;
        z.rows_mut(row, n).copy_from(&z_i);
        c.rows_mut(row, n).copy_from(&mb.c);
        let binv_c = &b_inv * &mb.c;
        u += binv_c.tr_mul(&mb.a);
        d += mb.c.tr_mul(&binv_c);
        weights.push(b_inv);
        row += n;
    }
    Ok(WorkingResponse { z, c, weights, u, d })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdSolution {
    pub theta: DVector<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// `½θᵀDθ − (u + Dθ_t)ᵀθ + Σ t_l|θ_l|`; coordinates with infinite
/// threshold contribute nothing while at zero.
pub fn cd_objective(
    u: &DVector<f64>,
    d: &DMatrix<f64>,
    expansion: &DVector<f64>,
    thresholds: &[f64],
    theta: &DVector<f64>,
) -> f64 {
    let b = u + d * expansion;
    let quad = 0.5 * theta.dot(&(d * theta)) - b.dot(theta);
    let pen: f64 = theta
        .iter()
        .zip(thresholds)
        .map(|(&x, &t)| if x == 0.0 { 0.0 } else { t * x.abs() })
        .sum();
    quad + pen
}

/// Cyclic coordinate descent for the weighted-L1 problem above, starting
/// from the expansion point. A threshold of `+∞` pins the coordinate at 0.
pub fn cd_penalized_wls(
    u: &DVector<f64>,
    d: &DMatrix<f64>,
    expansion: &DVector<f64>,
    thresholds: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<CdSolution> {
    const OP: &str = "selection::cd_penalized_wls";
    let p = u.len();
    if d.shape() != (p, p) || expansion.len() != p || thresholds.len() != p {
        return Err(Error::input(
            OP,
            "dimension mismatch between u, D, expansion point and thresholds",
        ));
    }
    for l in 0..p {
        if thresholds[l].is_finite() && !(d[(l, l)] > 0.0) {
            return Err(Error::linalg(
                OP,
                format!("non-positive diagonal D[{l},{l}] = {}", d[(l, l)]),
            ));
        }
    }
    let b = u + d * expansion;
    let mut theta = expansion.clone();
    for l in 0..p {
        if thresholds[l] == f64::INFINITY {
            theta[l] = 0.0;
        }
    }
    // Running Dθ keeps each coordinate update O(p).
    let mut d_theta = d * &theta;
    let mut sweeps = 0;
    let mut converged = p == 0;
    while sweeps < max_sweeps && !converged {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for l in 0..p {
            let old = theta[l];
            let partial = b[l] - (d_theta[l] - d[(l, l)] * old);
            let new = if thresholds[l] == f64::INFINITY {
                0.0
            } else {
                soft_threshold(partial, thresholds[l]) / d[(l, l)]
            };
            if new != old {
                let delta = new - old;
                for r in 0..p {
                    d_theta[r] += d[(r, l)] * delta;
                }
                theta[l] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        converged = max_change <= tol;
    }
    Ok(CdSolution {
        theta,
        sweeps,
        converged,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum StageKind {
    Mean,
    Assoc,
}

/// Shared outer loop. `frozen[l]` pins coordinate `l` at zero.
fn run_stage(
    ds: &Dataset,
    fixed: &Params,
    start: &DVector<f64>,
    cfg: &PenaltyConfig,
    frozen: &[bool],
    kind: StageKind,
    opts: &SolverOptions,
) -> Result<StageResult> {
    let n = ds.n_clusters() as f64;
    let mut theta = start.clone();
    for (l, &f) in frozen.iter().enumerate() {
        if f {
            theta[l] = 0.0;
        }
    }
    let mut result = StageResult {
        estimate: theta.clone(),
        active_set: Vec::new(),
        inner_sweeps: 0,
        outer_iterations: 0,
        objective_trace: Vec::new(),
        converged: false,
    };
    for outer in 1..=opts.max_outer {
        let params = match kind {
            StageKind::Mean => Params::new(theta.clone(), fixed.alpha.clone()),
            StageKind::Assoc => Params::new(fixed.beta.clone(), theta.clone()),
        };
        let ft = match kind {
            StageKind::Mean => fisher_terms(ds, &params)?,
            StageKind::Assoc => assoc_fisher_terms(ds, &params)?,
        };
        let (u, d) = match kind {
            StageKind::Mean => (&ft.u_beta, &ft.d_beta),
            StageKind::Assoc => (&ft.u_alpha, &ft.d_alpha),
        };
        let thresholds: Vec<f64> = (0..theta.len())
            .map(|l| {
                if frozen[l] {
                    f64::INFINITY
                } else {
                    n * cfg.derivative_at(l, theta[l].abs())
                }
            })
            .collect();
        let sol = cd_penalized_wls(u, d, &theta, &thresholds, opts.inner_tol, opts.max_sweeps)?;
        if !sol.converged {
            debug!("inner coordinate descent hit {} sweeps", opts.max_sweeps);
        }
        result.inner_sweeps += sol.sweeps;
        result
            .objective_trace
            .push(cd_objective(u, d, &theta, &thresholds, &sol.theta));
        let change = if theta.is_empty() {
            0.0
        } else {
            (&sol.theta - &theta).amax()
        };
        theta = sol.theta;
        result.outer_iterations = outer;
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("selection::run_stage", "iterates became non-finite"));
        }
        if change <= opts.tol {
            result.converged = true;
            break;
        }
    }
    if !result.converged {
        warn!(
            "penalized stage did not converge in {} outer iterations",
            opts.max_outer
        );
    }
    result.active_set = active_indices(&theta);
    result.estimate = theta;
    Ok(result)
}

/// Stage 1: penalized mean equations with `α` frozen at `init.alpha`,
/// starting from `init.beta`.
pub fn penalized_mean_stage(
    ds: &Dataset,
    init: &Params,
    cfg: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<StageResult> {
    cfg.validate()?;
    let frozen = vec![false; ds.p()];
    run_stage(ds, init, &init.beta, cfg, &frozen, StageKind::Mean, opts)
}

/// Stage 2: penalized association equations with `β` frozen at `beta_hat`.
/// Association coefficients linked to a zero entry of `beta_hat` are
/// pinned at zero before solving.
pub fn penalized_assoc_stage(
    ds: &Dataset,
    beta_hat: &DVector<f64>,
    alpha_init: &DVector<f64>,
    cfg: &PenaltyConfig,
    constraints: &[Constraint],
    opts: &SolverOptions,
) -> Result<(StageResult, Vec<ConstraintEvent>)> {
    const OP: &str = "selection::penalized_assoc_stage";
    cfg.validate()?;
    if ds.total_pairs() == 0 {
        return Err(Error::input(OP, "no pairs: every cluster has a single unit"));
    }
    let q = ds.q();
    let mut frozen = vec![false; q];
    let mut log = Vec::new();
    for c in constraints {
        if c.mean_index >= beta_hat.len() {
            return Err(Error::config(
                OP,
                format!("constraint mean index {} out of range", c.mean_index),
            ));
        }
        if beta_hat[c.mean_index] == 0.0 {
            for &a in &c.assoc_indices {
                if a >= q {
                    return Err(Error::config(
                        OP,
                        format!("constraint association index {a} out of range"),
                    ));
                }
                if !frozen[a] {
                    frozen[a] = true;
                    log.push(ConstraintEvent {
                        mean_index: c.mean_index,
                        assoc_index: a,
                    });
                }
            }
        }
    }
    let fixed = Params::new(beta_hat.clone(), alpha_init.clone());
    let stage = run_stage(ds, &fixed, alpha_init, cfg, &frozen, StageKind::Assoc, opts)?;
    Ok((stage, log))
}

fn check_mode(mode: &AnalysisMode, ds: &Dataset, cfg_mean: &PenaltyConfig, cfg_assoc: &PenaltyConfig) -> Result<()> {
    const OP: &str = "selection::fit_hpgee2";
    mode.validate(ds.p(), ds.q())?;
    match mode.kind {
        ModeKind::MeanOnly if cfg_assoc.kind != PenaltyKind::None => {
            Err(Error::config(OP, "mean-only mode requires no association penalty"))
        }
        ModeKind::AssocOnly if cfg_mean.kind != PenaltyKind::None => {
            Err(Error::config(OP, "association-only mode requires no mean penalty"))
        }
        _ => Ok(()),
    }
}

fn stage_error(stage: &'static str, partial: Params, source: Error) -> Error {
    Error::Stage {
        op: "selection::fit_hpgee2",
        stage,
        partial: Some(Box::new(partial)),
        source: Box::new(source),
    }
}

/// Full procedure: ALR initial fit, then the stages the mode calls for.
pub fn fit_hpgee2(
    ds: &Dataset,
    mode: &AnalysisMode,
    cfg_mean: &PenaltyConfig,
    cfg_assoc: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<FitResult> {
    check_mode(mode, ds, cfg_mean, cfg_assoc)?;
    let alr = fit_alr(ds, &Params::zeros(ds.p(), ds.q()), opts.tol, opts.max_outer).map_err(|e| Error::Stage {
        op: "selection::fit_hpgee2",
        stage: "initial ALR fit",
        partial: None,
        source: Box::new(e),
    })?;
    fit_hpgee2_from_alr(ds, &alr, mode, cfg_mean, cfg_assoc, opts)
}

/// As [`fit_hpgee2`] but reusing an existing ALR fit (shared across a λ grid).
pub fn fit_hpgee2_from_alr(
    ds: &Dataset,
    alr: &AlrFit,
    mode: &AnalysisMode,
    cfg_mean: &PenaltyConfig,
    cfg_assoc: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<FitResult> {
    check_mode(mode, ds, cfg_mean, cfg_assoc)?;
    let init = &alr.params;
    let mut params = init.clone();
    let mut mean_stage = None;
    let mut assoc_stage = None;
    let mut constraint_log = Vec::new();

    if mode.kind != ModeKind::AssocOnly {
        let stage = penalized_mean_stage(ds, init, cfg_mean, opts)
            .map_err(|e| stage_error("mean selection stage", init.clone(), e))?;
        params.beta = stage.estimate.clone();
        mean_stage = Some(stage);
    }
    if mode.kind != ModeKind::MeanOnly {
        let (stage, log) = penalized_assoc_stage(ds, &params.beta, &init.alpha, cfg_assoc, &mode.constraints, opts)
            .map_err(|e| stage_error("association selection stage", params.clone(), e))?;
        params.alpha = stage.estimate.clone();
        assoc_stage = Some(stage);
        constraint_log = log;
    }

    Ok(FitResult {
        mode: mode.clone(),
        params,
        alr: alr.clone(),
        mean_stage,
        assoc_stage,
        constraint_log,
        cfg_mean: cfg_mean.clone(),
        cfg_assoc: cfg_assoc.clone(),
        n_clusters: ds.n_clusters(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    #[test]
    fn cd_without_penalty_on_identity() {
        let u = dv(&[0.3, -1.2, 2.0]);
        let t = dv(&[1.0, 0.5, -0.25]);
        let sol = cd_penalized_wls(&u, &DMatrix::identity(3, 3), &t, &[0.0; 3], 1e-12, 100).unwrap();
        assert_abs_diff_eq!(sol.theta, &u + &t, epsilon = 1e-14);
    }

    #[test]
    fn cd_scalar_dead_zone() {
        let sol = cd_penalized_wls(&dv(&[0.5]), &DMatrix::identity(1, 1), &dv(&[0.0]), &[1.0], 1e-12, 10).unwrap();
        assert_eq!(sol.theta[0], 0.0);
    }

    /// Dense grid search on [−2, 2]² refined around the best cell.
    fn grid_minimiser(b: &[f64; 2], d: &DMatrix<f64>, t: &[f64; 2]) -> (f64, f64) {
        let f = |x: f64, y: f64| {
            0.5 * (d[(0, 0)] * x * x + 2.0 * d[(0, 1)] * x * y + d[(1, 1)] * y * y) - b[0] * x - b[1] * y
                + t[0] * x.abs()
                + t[1] * y.abs()
        };
        let (mut cx, mut cy, mut half) = (0.0, 0.0, 2.0);
        for _ in 0..12 {
            let steps = 200;
            let mut best = (f64::INFINITY, cx, cy);
            for i in 0..=steps {
                for j in 0..=steps {
                    let x = cx - half + 2.0 * half * i as f64 / steps as f64;
                    let y = cy - half + 2.0 * half * j as f64 / steps as f64;
                    // Include the axes exactly so kinks are reachable.
                    for (xx, yy) in [(x, y), (0.0, y), (x, 0.0), (0.0, 0.0)] {
                        let v = f(xx, yy);
                        if v < best.0 {
                            best = (v, xx, yy);
                        }
                    }
                }
            }
            cx = best.1;
            cy = best.2;
            half /= 20.0;
        }
        (cx, cy)
    }

    #[test]
    fn cd_matches_grid_oracle_in_2d() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let (gx, gy) = grid_minimiser(&[1.0, 0.2], &d, &[0.3, 0.3]);
        // u + Dθ_t = (1, 0.2) with θ_t = 0.
        let sol = cd_penalized_wls(&dv(&[1.0, 0.2]), &d, &dv(&[0.0, 0.0]), &[0.3, 0.3], 1e-12, 1000).unwrap();
        assert_abs_diff_eq!(sol.theta[0], gx, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.theta[1], gy, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.theta[0], 0.7, epsilon = 1e-9);
        assert_eq!(sol.theta[1], 0.0);
    }

    #[test]
    fn cd_infinite_threshold_pins_zero() {
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let sol = cd_penalized_wls(
            &dv(&[1.0, 5.0]),
            &d,
            &dv(&[0.4, 0.4]),
            &[0.0, f64::INFINITY],
            1e-12,
            100,
        )
        .unwrap();
        assert_eq!(sol.theta[1], 0.0);
        assert_abs_diff_eq!(sol.theta[0], (1.0 + 2.0 * 0.4 + 0.3 * 0.4) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cd_rejects_nonpositive_diagonal() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(cd_penalized_wls(&dv(&[1.0, 1.0]), &d, &dv(&[0.0, 0.0]), &[0.0, 0.0], 1e-8, 10).is_err());
    }

    #[test]
    fn mode_validation() {
        let c = Constraint {
            mean_index: 1,
            assoc_indices: vec![2],
        };
        assert!(AnalysisMode::joint()
            .with_constraints(vec![c.clone()])
            .validate(3, 3)
            .is_ok());
        assert!(AnalysisMode::mean_only()
            .with_constraints(vec![c.clone()])
            .validate(3, 3)
            .is_err());
        assert!(AnalysisMode::joint().with_constraints(vec![c]).validate(3, 2).is_err());
        assert_eq!("joint".parse::<ModeKind>().unwrap(), ModeKind::Joint);
    }
}
