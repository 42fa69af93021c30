//! Unpenalized GEE2 by alternating logistic regressions.
//!
//! The mean step is Fisher scoring on `U_β` with `α` fixed; the association
//! step is Fisher scoring of the offset logistic regression of `Y_ij` on
//! `Y_ik` with `β` fixed. Each alternation runs its inner loop to `tol / 10`.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::model::{Dataset, Params};
use crate::scores::{assoc_fisher_terms, fisher_terms, FisherTerms};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_OUTER: usize = 100;
const MAX_INNER: usize = 100;
const MAX_HALVINGS: usize = 10;
const GROWTH_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    pub outer_iterations: usize,
    pub converged: bool,
    pub final_update_norm: f64,
    pub clamp_events: usize,
    pub condition_warnings: usize,
    /// Cluster evaluations whose working correlation was floored.
    pub covariance_repairs: usize,
    pub step_halvings: usize,
}

#[derive(Debug, Clone)]
pub struct FisherStep {
    pub next: DVector<f64>,
    pub halvings: usize,
    /// No acceptable step was found; `next` is the current iterate.
    pub stalled: bool,
    pub clamp_events: usize,
    pub condition_warnings: usize,
    pub covariance_repairs: usize,
}

#[derive(Debug, Clone)]
pub struct AlrFit {
    pub params: Params,
    pub diagnostics: FitDiagnostics,
}

#[derive(Clone, Copy)]
enum Block {
    Mean,
    Assoc,
}

impl Block {
    fn op(self) -> &'static str {
        match self {
            Block::Mean => "alr::mean_fisher_step",
            Block::Assoc => "alr::assoc_offset_step",
        }
    }

    fn current(self, p: &Params) -> &DVector<f64> {
        match self {
            Block::Mean => &p.beta,
            Block::Assoc => &p.alpha,
        }
    }

    fn score(self, ft: &FisherTerms) -> &DVector<f64> {
        match self {
            Block::Mean => &ft.u_beta,
            Block::Assoc => &ft.u_alpha,
        }
    }

    fn info(self, ft: &FisherTerms) -> (&DMatrix<f64>, &'static str) {
        match self {
            Block::Mean => (&ft.d_beta, "sum of C'B^-1C"),
            Block::Assoc => (&ft.d_alpha, "sum of G'S^-1G"),
        }
    }

    fn terms(self, ds: &Dataset, p: &Params) -> Result<FisherTerms> {
        match self {
            Block::Mean => fisher_terms(ds, p),
            Block::Assoc => assoc_fisher_terms(ds, p),
        }
    }

    fn with(self, p: &Params, v: DVector<f64>) -> Params {
        match self {
            Block::Mean => Params::new(v, p.alpha.clone()),
            Block::Assoc => Params::new(p.beta.clone(), v),
        }
    }
}

/// One guarded Fisher step. `base` may carry the terms already evaluated at
/// `params`; the terms at the accepted point are returned for reuse.
fn fisher_step(
    ds: &Dataset,
    params: &Params,
    block: Block,
    base: Option<FisherTerms>,
) -> Result<(FisherStep, Option<FisherTerms>)> {
    let op = block.op();
    let ft = match base {
        Some(ft) => ft,
        None => block.terms(ds, params)?,
    };
    let (info, what) = block.info(&ft);
    let score = block.score(&ft);
    let step = solve_spd(info, score, op, what)?;
    let base_norm = score.amax();
    let current = block.current(params);
    let summary = |next, halvings, stalled| FisherStep {
        next,
        halvings,
        stalled,
        clamp_events: ft.clamp_events,
        condition_warnings: ft.condition_warnings,
        covariance_repairs: ft.covariance_repairs,
    };

    // Guard against steps that blow the score up by more than 10x or land
    // where the next step could not be solved.
    let mut scale = 1.0;
    let mut halvings = 0;
    loop {
        let candidate = current + &step * scale;
        if let Ok(t) = block.terms(ds, &block.with(params, candidate.clone())) {
            let (next_info, _) = block.info(&t);
            let solvable = solve_spd(next_info, block.score(&t), op, what).is_ok();
            if solvable && block.score(&t).amax() <= GROWTH_LIMIT * base_norm {
                return Ok((summary(candidate, halvings, false), Some(t)));
            }
        }
        if halvings == MAX_HALVINGS {
            warn!("{op}: score still growing after {MAX_HALVINGS} step halvings; keeping the current iterate");
            return Ok((summary(current.clone(), halvings, true), Some(ft.clone())));
        }
        halvings += 1;
        scale *= 0.5;
        debug!("{op}: halving step (x{halvings})");
    }
}

/// `β + (Σ CᵀB⁻¹C)⁻¹ Σ CᵀB⁻¹A` at fixed `α`, with step halving.
pub fn mean_fisher_step(ds: &Dataset, beta: &DVector<f64>, alpha: &DVector<f64>) -> Result<FisherStep> {
    Ok(fisher_step(ds, &Params::new(beta.clone(), alpha.clone()), Block::Mean, None)?.0)
}

/// `α + (Σ GᵀS⁻¹G)⁻¹ Σ GᵀS⁻¹R` at fixed `β`, offsets recomputed at the current `α`.
pub fn assoc_offset_step(ds: &Dataset, beta: &DVector<f64>, alpha: &DVector<f64>) -> Result<FisherStep> {
    if ds.total_pairs() == 0 {
        return Err(Error::input(
            Block::Assoc.op(),
            "no pairs: every cluster has a single unit",
        ));
    }
    Ok(fisher_step(ds, &Params::new(beta.clone(), alpha.clone()), Block::Assoc, None)?.0)
}

/// Returns whether the block stalled (no acceptable step).
fn inner_loop(ds: &Dataset, params: &mut Params, block: Block, tol: f64, diag: &mut FitDiagnostics) -> Result<bool> {
    if matches!(block, Block::Assoc) && ds.total_pairs() == 0 {
        return Err(Error::input(block.op(), "no pairs: every cluster has a single unit"));
    }
    let mut cached = None;
    for _ in 0..MAX_INNER {
        let (step, terms) = fisher_step(ds, params, block, cached.take())?;
        cached = terms;
        let change = (&step.next - block.current(params)).amax();
        diag.step_halvings += step.halvings;
        diag.clamp_events += step.clamp_events;
        diag.condition_warnings += step.condition_warnings;
        diag.covariance_repairs += step.covariance_repairs;
        *params = block.with(params, step.next);
        if step.stalled {
            return Ok(true);
        }
        if !(change > tol) {
            break;
        }
    }
    Ok(false)
}

/// Alternates the mean and association steps until the largest parameter
/// change across one alternation is at most `tol`. Non-convergence is
/// reported in the diagnostics, not as an error.
pub fn fit_alr(ds: &Dataset, init: &Params, tol: f64, max_outer: usize) -> Result<AlrFit> {
    const OP: &str = "alr::fit_alr";
    if !(tol > 0.0) {
        return Err(Error::config(OP, format!("tolerance must be positive, got {tol}")));
    }
    if init.beta.len() != ds.p() || init.alpha.len() != ds.q() {
        return Err(Error::input(OP, "initial values do not match the design dimensions"));
    }
    let inner_tol = tol / 10.0;
    let mut params = init.clone();
    let mut diag = FitDiagnostics::default();
    for outer in 1..=max_outer {
        let previous = params.clone();
        let mut stalled = inner_loop(ds, &mut params, Block::Mean, inner_tol, &mut diag)?;
        if ds.q() > 0 {
            stalled |= inner_loop(ds, &mut params, Block::Assoc, inner_tol, &mut diag)?;
        }
        diag.outer_iterations = outer;
        diag.final_update_norm = params.max_abs_diff(&previous);
        debug!(
            "{OP}: alternation {outer}, change {:.3e}, beta {:?}, alpha {:?}",
            diag.final_update_norm,
            params.beta.as_slice(),
            params.alpha.as_slice()
        );
        if !params.is_finite() {
            return Err(Error::domain(OP, "iterates became non-finite"));
        }
        if !(diag.final_update_norm > tol) {
            // A stalled step leaves the iterate unchanged without solving the equations.
            diag.converged = !stalled;
            break;
        }
    }
    if !diag.converged {
        warn!(
            "{OP}: no convergence after {max_outer} alternations (last change {:.3e})",
            diag.final_update_norm
        );
    }
    Ok(AlrFit {
        params,
        diagnostics: diag,
    })
}

/// `fit_alr` from `β = 0, α = 0` with the default tolerance.
pub fn fit_alr_default(ds: &Dataset) -> Result<AlrFit> {
    fit_alr(ds, &Params::zeros(ds.p(), ds.q()), DEFAULT_TOL, DEFAULT_MAX_OUTER)
}
