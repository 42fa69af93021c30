//! Modified-BIC selection of the tuning parameter.
//!
//! Each criterion is a score quadratic form plus `log n` per nonzero:
//! `(Σ U_i)ᵀ (Σ U_i U_iᵀ)⁻¹ (Σ U_i) + log n · #nonzero`, where the middle
//! matrix falls back to a pseudo-inverse when rank deficient.

use std::str::FromStr;

use log::{debug, warn};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::alr::{fit_alr, AlrFit};
use crate::error::{Error, Result};
use crate::linalg::pinv_psd;
use crate::model::{Dataset, Params};
use crate::penalty::{PenaltyConfig, PenaltyKind};
use crate::scores::score_pair;
use crate::selection::{fit_hpgee2_from_alr, AnalysisMode, FitResult, ModeKind, SolverOptions};

const PINV_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicValue {
    pub quadratic: f64,
    pub nonzero: usize,
    pub log_n: f64,
    pub rank_deficient: bool,
}

impl BicValue {
    pub fn total(&self) -> f64 {
        self.quadratic + self.log_n * self.nonzero as f64
    }
}

/// `(Σ U_i)ᵀ (Σ U_i U_iᵀ)⁺ (Σ U_i)` and whether the pseudo-inverse dropped directions.
pub fn score_quadratic_form(per_cluster: &[DVector<f64>]) -> (f64, bool) {
    let Some(first) = per_cluster.first() else {
        return (0.0, false);
    };
    let d = first.len();
    let mut sum = DVector::zeros(d);
    let mut outer = nalgebra::DMatrix::zeros(d, d);
    for u in per_cluster {
        sum += u;
        outer += u * u.transpose();
    }
    if outer.iter().all(|&v| v == 0.0) {
        warn!("all per-cluster scores are zero; score term set to 0");
        return (0.0, false);
    }
    let (pinv, dropped) = pinv_psd(&outer, PINV_REL_TOL);
    if dropped {
        debug!("score outer-product matrix is rank deficient; using pseudo-inverse");
    }
    (sum.dot(&(&pinv * &sum)).max(0.0), dropped)
}

fn count_nonzero(v: &DVector<f64>) -> usize {
    v.iter().filter(|&&x| x != 0.0).count()
}

fn log_n(ds: &Dataset) -> f64 {
    (ds.n_clusters() as f64).ln()
}

/// Mean-model criterion with scores at `(β̂, α̂_A)`.
pub fn bic_mean(ds: &Dataset, fit: &FitResult) -> Result<BicValue> {
    let at = Params::new(fit.params.beta.clone(), fit.alr.params.alpha.clone());
    let (quadratic, rank_deficient) = score_quadratic_form(&score_pair(ds, &at)?.per_cluster_beta);
    Ok(BicValue {
        quadratic,
        nonzero: count_nonzero(&fit.params.beta),
        log_n: log_n(ds),
        rank_deficient,
    })
}

/// Association-model criterion with scores at `(β̂_A, α̂)`.
pub fn bic_assoc(ds: &Dataset, fit: &FitResult) -> Result<BicValue> {
    let at = Params::new(fit.alr.params.beta.clone(), fit.params.alpha.clone());
    let (quadratic, rank_deficient) = score_quadratic_form(&score_pair(ds, &at)?.per_cluster_alpha);
    Ok(BicValue {
        quadratic,
        nonzero: count_nonzero(&fit.params.alpha),
        log_n: log_n(ds),
        rank_deficient,
    })
}

/// Joint criterion: mean form at `(β̂, α̂_A)`, association form at `(β̂, α̂)`.
pub fn bic_joint(ds: &Dataset, fit: &FitResult) -> Result<BicValue> {
    let mean_at = Params::new(fit.params.beta.clone(), fit.alr.params.alpha.clone());
    let (qb, db) = score_quadratic_form(&score_pair(ds, &mean_at)?.per_cluster_beta);
    let (qa, da) = score_quadratic_form(&score_pair(ds, &fit.params)?.per_cluster_alpha);
    Ok(BicValue {
        quadratic: qb + qa,
        nonzero: count_nonzero(&fit.params.beta) + count_nonzero(&fit.params.alpha),
        log_n: log_n(ds),
        rank_deficient: db || da,
    })
}

pub fn bic_for_mode(ds: &Dataset, fit: &FitResult) -> Result<BicValue> {
    match fit.mode.kind {
        ModeKind::MeanOnly => bic_mean(ds, fit),
        ModeKind::AssocOnly => bic_assoc(ds, fit),
        ModeKind::Joint => bic_joint(ds, fit),
    }
}

/// The λ values to try.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub values: Vec<f64>,
}

impl GridSpec {
    /// `count` log-spaced values from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        const OP: &str = "tuning::GridSpec";
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
            return Err(Error::config(OP, format!("invalid log grid {lo}:{hi}:{count}")));
        }
        if count == 1 {
            return Ok(GridSpec { values: vec![lo] });
        }
        let (a, b) = (lo.ln(), hi.ln());
        let values = (0..count)
            .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
            .collect();
        Ok(GridSpec { values })
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::config(
                "tuning::GridSpec",
                "grid must be a nonempty list of finite λ ≥ 0",
            ));
        }
        Ok(GridSpec { values })
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::log_spaced(1e-3, 1.0, 30).expect("static grid")
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// `LO:HI:N`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::config("tuning::GridSpec", format!("expected LO:HI:N, got '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        GridSpec::log_spaced(lo, hi, n)
    }
}

/// Penalty configurations for a mode with a shared λ. Intercepts (index 0)
/// are excluded when `intercept` is set.
pub fn penalties_for_mode(
    kind: ModeKind,
    penalty: PenaltyKind,
    lambda: f64,
    a: f64,
    intercept: bool,
) -> Result<(PenaltyConfig, PenaltyConfig)> {
    let exclude: Vec<usize> = if intercept { vec![0] } else { Vec::new() };
    let active = PenaltyConfig::new(penalty, lambda)?
        .with_a(a)?
        .excluding(exclude.iter().copied());
    let none = PenaltyConfig::none().excluding(exclude.iter().copied());
    Ok(match kind {
        ModeKind::MeanOnly => (active, none),
        ModeKind::AssocOnly => (none, active),
        ModeKind::Joint => (active.clone(), active),
    })
}

#[derive(Debug, Clone)]
pub struct GridPoint {
    pub lambda: f64,
    pub bic: Option<BicValue>,
    pub mean_active: Vec<usize>,
    pub assoc_active: Vec<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TuningReport {
    pub path: Vec<GridPoint>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    pub chosen_fit: FitResult,
}

impl TuningReport {
    pub fn grid(&self) -> Vec<f64> {
        self.path.iter().map(|g| g.lambda).collect()
    }

    /// BIC per grid point; failed fits give NaN.
    pub fn bic_values(&self) -> Vec<f64> {
        self.path
            .iter()
            .map(|g| g.bic.map_or(f64::NAN, |b| b.total()))
            .collect()
    }
}

pub fn grid_search(
    ds: &Dataset,
    mode: &AnalysisMode,
    mean_template: &PenaltyConfig,
    assoc_template: &PenaltyConfig,
    grid: &GridSpec,
    opts: &SolverOptions,
) -> Result<TuningReport> {
    let alr = fit_alr(ds, &Params::zeros(ds.p(), ds.q()), opts.tol, opts.max_outer)?;
    grid_search_from_alr(ds, &alr, mode, mean_template, assoc_template, grid, opts)
}

/// Fits every λ (in parallel, sharing one ALR fit), evaluates the mode's
/// criterion and keeps the minimiser. Exact ties go to the larger λ.
/// Templates supply kind, `a` and exclusions; their λ is replaced.
pub fn grid_search_from_alr(
    ds: &Dataset,
    alr: &AlrFit,
    mode: &AnalysisMode,
    mean_template: &PenaltyConfig,
    assoc_template: &PenaltyConfig,
    grid: &GridSpec,
    opts: &SolverOptions,
) -> Result<TuningReport> {
    const OP: &str = "tuning::grid_search";
    if grid.values.is_empty() {
        return Err(Error::config(OP, "empty λ grid"));
    }
    let fits: Vec<(GridPoint, Option<FitResult>)> = grid
        .values
        .par_iter()
        .map(|&lambda| {
            let outcome = fit_hpgee2_from_alr(
                ds,
                alr,
                mode,
                &mean_template.with_lambda(lambda),
                &assoc_template.with_lambda(lambda),
                opts,
            )
            .and_then(|fit| bic_for_mode(ds, &fit).map(|b| (fit, b)));
            match outcome {
                Ok((fit, bic)) => (
                    GridPoint {
                        lambda,
                        bic: Some(bic),
                        mean_active: fit.mean_active(),
                        assoc_active: fit.assoc_active(),
                        error: None,
                    },
                    Some(fit),
                ),
                Err(e) => {
                    debug!("{OP}: λ = {lambda} failed: {e}");
                    (
                        GridPoint {
                            lambda,
                            bic: None,
                            mean_active: Vec::new(),
                            assoc_active: Vec::new(),
                            error: Some(e.to_string()),
                        },
                        None,
                    )
                }
            }
        })
        .collect();

    let mut best: Option<(usize, f64, f64)> = None;
    for (i, (point, _)) in fits.iter().enumerate() {
        let Some(bic) = point.bic else { continue };
        let value = bic.total();
        let better = match best {
            None => true,
            Some((_, bv, bl)) => value < bv || (value == bv && point.lambda > bl),
        };
        if better {
            best = Some((i, value, point.lambda));
        }
    }
    let Some((chosen_index, _, chosen_lambda)) = best else {
        let first = fits.iter().find_map(|(p, _)| p.error.clone()).unwrap_or_default();
        return Err(Error::input(
            OP,
            format!("every λ on the grid failed; first error: {first}"),
        ));
    };
    let mut path = Vec::with_capacity(fits.len());
    let mut chosen_fit = None;
    for (i, (point, fit)) in fits.into_iter().enumerate() {
        if i == chosen_index {
            chosen_fit = fit;
        }
        path.push(point);
    }
    Ok(TuningReport {
        path,
        chosen_index,
        chosen_lambda,
        chosen_fit: chosen_fit.expect("chosen grid point has a fit"),
    })
}
