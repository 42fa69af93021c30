//! Simulation of correlated binary clusters from a Bahadur second-order
//! representation, and replicated selection studies.
//!
//! Each replicate draws covariates and responses from its own ChaCha
//! streams derived from the master seed, so a replicate's data does not
//! depend on how many replicates run or in which order.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::alr::fit_alr;
use crate::error::{Error, Result};
use crate::model::{lexicographic_pairs, logistic_clamped, solve_pair_prob, ClusterData, Dataset, Params};
use crate::penalty::PenaltyKind;
use crate::selection::{AnalysisMode, ModeKind, SolverOptions};
use crate::tuning::{grid_search_from_alr, penalties_for_mode, GridSpec};

/// Largest cluster the outcome enumeration accepts.
pub const MAX_ENUM_UNITS: usize = 20;
/// Clusters losing more than this much probability mass to clipping are logged.
const HEAVY_CLIP: f64 = 0.05;
const MAX_FAILURE_SHARE: f64 = 0.10;

const STREAM_COVARIATES: u64 = 0;
const STREAM_RESPONSES: u64 = 1;

/// Multivariate normal block with AR(1) correlation `ρ^|i−j|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockLaw {
    pub dim: usize,
    pub mean: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl BlockLaw {
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            self.sigma * self.sigma * self.rho.powi((i as i32 - j as i32).abs())
        })
    }

    fn factor(&self) -> Result<DMatrix<f64>> {
        if self.dim == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        self.covariance().cholesky().map(|c| c.unpack()).ok_or_else(|| {
            Error::config(
                "simulate::gen_covariates",
                "covariate covariance is not positive definite",
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub n_clusters: usize,
    pub cluster_size: usize,
    /// Unit-level blocks; the mean design is `[1, x, z]`.
    pub x_law: BlockLaw,
    pub z_law: BlockLaw,
    /// Pair-level blocks; the association design is `[1, w, v]`.
    pub w_law: BlockLaw,
    pub v_law: BlockLaw,
    pub beta_true: DVector<f64>,
    pub alpha_true: DVector<f64>,
    pub mode: ModeKind,
    pub penalties: Vec<PenaltyKind>,
    pub grid: GridSpec,
    pub scad_a: f64,
    pub solver: SolverOptions,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let law = |mean| BlockLaw {
            dim: 5,
            mean,
            sigma: 1.0,
            rho: 0.5,
        };
        StudyConfig {
            n_clusters: 200,
            cluster_size: 5,
            x_law: law(0.5),
            z_law: law(-0.2),
            w_law: law(0.5),
            v_law: law(-0.2),
            beta_true: DVector::from_vec(vec![-1.6, 3.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, -1.5, 0.0, 0.0]),
            alpha_true: DVector::from_vec(vec![0.693, 0.3, -0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            mode: ModeKind::MeanOnly,
            penalties: vec![PenaltyKind::Lasso, PenaltyKind::Scad],
            grid: GridSpec::default(),
            scad_a: crate::penalty::DEFAULT_SCAD_A,
            solver: SolverOptions::default(),
            replicates: 100,
            seed: 20240601,
        }
    }
}

impl StudyConfig {
    pub fn p(&self) -> usize {
        1 + self.x_law.dim + self.z_law.dim
    }

    pub fn q(&self) -> usize {
        1 + self.w_law.dim + self.v_law.dim
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "simulate::StudyConfig";
        if self.n_clusters == 0 || self.cluster_size == 0 {
            return Err(Error::config(OP, "need at least one cluster of at least one unit"));
        }
        if self.cluster_size > MAX_ENUM_UNITS {
            return Err(Error::config(
                OP,
                format!("cluster size above {MAX_ENUM_UNITS} is not supported"),
            ));
        }
        if self.beta_true.len() != self.p() || self.alpha_true.len() != self.q() {
            return Err(Error::config(
                OP,
                format!(
                    "true coefficients have lengths ({}, {}), designs need ({}, {})",
                    self.beta_true.len(),
                    self.alpha_true.len(),
                    self.p(),
                    self.q()
                ),
            ));
        }
        for law in [self.x_law, self.z_law, self.w_law, self.v_law] {
            if !(law.sigma > 0.0) || !(law.rho.abs() < 1.0) {
                return Err(Error::config(OP, "covariate laws need sigma > 0 and |rho| < 1"));
            }
        }
        Ok(())
    }

    pub fn mean_names(&self) -> Vec<String> {
        std::iter::once("(Intercept)".to_string())
            .chain((1..=self.x_law.dim).map(|i| format!("x{i}")))
            .chain((1..=self.z_law.dim).map(|i| format!("z{i}")))
            .collect()
    }

    pub fn assoc_names(&self) -> Vec<String> {
        std::iter::once("(Intercept)".to_string())
            .chain((1..=self.w_law.dim).map(|i| format!("w{i}")))
            .chain((1..=self.v_law.dim).map(|i| format!("v{i}")))
            .collect()
    }
}

/// Design matrices for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCovariates {
    /// `n × p`, intercept first.
    pub x: DMatrix<f64>,
    /// `m × q`, intercept first, lexicographic pair order.
    pub z: DMatrix<f64>,
}

/// Precomputed Cholesky factors for repeated covariate draws.
#[derive(Debug, Clone)]
pub struct CovariateSampler {
    laws: [BlockLaw; 4],
    factors: [DMatrix<f64>; 4],
    cluster_size: usize,
}

impl CovariateSampler {
    pub fn new(cfg: &StudyConfig) -> Result<Self> {
        let laws = [cfg.x_law, cfg.z_law, cfg.w_law, cfg.v_law];
        Ok(CovariateSampler {
            factors: [
                laws[0].factor()?,
                laws[1].factor()?,
                laws[2].factor()?,
                laws[3].factor()?,
            ],
            laws,
            cluster_size: cfg.cluster_size,
        })
    }

    fn fill<R: Rng + ?Sized>(&self, block: usize, out: &mut [f64], rng: &mut R) {
        let law = &self.laws[block];
        let e = DVector::from_fn(law.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let draw = &self.factors[block] * e;
        for (o, d) in out.iter_mut().zip(draw.iter()) {
            *o = law.mean + d;
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ClusterCovariates {
        let n = self.cluster_size;
        let m = n * n.saturating_sub(1) / 2;
        let (dx, dz, dw, dv) = (self.laws[0].dim, self.laws[1].dim, self.laws[2].dim, self.laws[3].dim);
        let mut x = DMatrix::zeros(n, 1 + dx + dz);
        let mut row = vec![0.0; (dx + dz).max(dw + dv)];
        for j in 0..n {
            x[(j, 0)] = 1.0;
            self.fill(0, &mut row[..dx], rng);
            self.fill(1, &mut row[dx..dx + dz], rng);
            for (c, &v) in row[..dx + dz].iter().enumerate() {
                x[(j, 1 + c)] = v;
            }
        }
        let mut z = DMatrix::zeros(m, 1 + dw + dv);
        for k in 0..m {
            z[(k, 0)] = 1.0;
            self.fill(2, &mut row[..dw], rng);
            self.fill(3, &mut row[dw..dw + dv], rng);
            for (c, &v) in row[..dw + dv].iter().enumerate() {
                z[(k, 1 + c)] = v;
            }
        }
        ClusterCovariates { x, z }
    }
}

/// One cluster's covariates under `cfg`.
pub fn gen_covariates<R: Rng + ?Sized>(cfg: &StudyConfig, rng: &mut R) -> Result<ClusterCovariates> {
    Ok(CovariateSampler::new(cfg)?.draw(rng))
}

/// Pearson correlation of two binary variables with margins `mu_j`, `mu_k`
/// and joint success probability `nu`.
pub fn rho_from_pair(mu_j: f64, mu_k: f64, nu: f64) -> f64 {
    (nu - mu_j * mu_k) / (mu_j * (1.0 - mu_j) * mu_k * (1.0 - mu_k)).sqrt()
}

/// Bahadur second-order probabilities over all `2^n` outcomes. Outcome
/// index bit `j` is `Y_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BahadurTable {
    /// Unclipped values; these can be negative.
    pub raw: Vec<f64>,
    /// Clipped at zero and renormalised.
    pub probs: Vec<f64>,
    /// Total negative mass removed by clipping.
    pub clipped_mass: f64,
}

impl BahadurTable {
    pub fn n_units(&self) -> usize {
        self.raw.len().trailing_zeros() as usize
    }

    /// Outcome vector for table index `index`.
    pub fn outcome(&self, index: usize) -> Vec<u8> {
        (0..self.n_units()).map(|j| ((index >> j) & 1) as u8).collect()
    }
}

/// `rho` holds the pairwise correlations in lexicographic pair order.
pub fn bahadur_pmf(mu: &[f64], rho: &[f64]) -> Result<BahadurTable> {
    const OP: &str = "simulate::bahadur_pmf";
    let n = mu.len();
    if n == 0 || n > MAX_ENUM_UNITS {
        return Err(Error::input(
            OP,
            format!("cluster size {n} outside 1..={MAX_ENUM_UNITS}"),
        ));
    }
    if mu.iter().any(|&m| !(m > 0.0 && m < 1.0)) {
        return Err(Error::domain(OP, "marginal means must lie strictly inside (0, 1)"));
    }
    let pairs = lexicographic_pairs(n);
    if rho.len() != pairs.len() {
        return Err(Error::input(
            OP,
            format!("{} correlations for {} pairs", rho.len(), pairs.len()),
        ));
    }
    let sd: Vec<f64> = mu.iter().map(|&m| (m * (1.0 - m)).sqrt()).collect();
    let cells = 1usize << n;
    let mut raw = Vec::with_capacity(cells);
    let mut e = vec![0.0; n];
    for index in 0..cells {
        let mut base = 1.0;
        for j in 0..n {
            let y = ((index >> j) & 1) as f64;
            base *= if y == 1.0 { mu[j] } else { 1.0 - mu[j] };
            e[j] = (y - mu[j]) / sd[j];
        }
        let corr: f64 = pairs.iter().zip(rho).map(|(&(j, k), &r)| r * e[j] * e[k]).sum();
        raw.push(base * (1.0 + corr));
    }
    let clipped_mass: f64 = raw.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    let kept: f64 = raw.iter().filter(|&&v| v > 0.0).sum();
    if !(kept > 0.0) {
        return Err(Error::domain(OP, "no outcome has positive probability"));
    }
    let probs = raw.iter().map(|&v| v.max(0.0) / kept).collect();
    Ok(BahadurTable {
        raw,
        probs,
        clipped_mass,
    })
}

/// Inverse-CDF draw from a table.
pub fn sample_from_table<R: Rng + ?Sized>(table: &BahadurTable, rng: &mut R) -> Vec<u8> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = table.probs.len() - 1;
    for (i, &p) in table.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            chosen = i;
            break;
        }
    }
    table.outcome(chosen)
}

/// Bahadur table implied by the true parameters at one cluster's covariates.
pub fn cluster_table(cfg: &StudyConfig, cov: &ClusterCovariates) -> Result<BahadurTable> {
    let n = cov.x.nrows();
    let mu: Vec<f64> = (0..n)
        .map(|j| logistic_clamped(cov.x.row(j).dot(&cfg.beta_true.transpose())).0)
        .collect();
    let rho = lexicographic_pairs(n)
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let phi = cov.z.row(k).dot(&cfg.alpha_true.transpose()).exp();
            let nu = solve_pair_prob(mu[a], mu[b], phi)?;
            Ok(rho_from_pair(mu[a], mu[b], nu))
        })
        .collect::<Result<Vec<f64>>>()?;
    bahadur_pmf(&mu, &rho)
}

/// Responses for one cluster and the mass clipped from its table.
pub fn sample_cluster<R: Rng + ?Sized>(
    cfg: &StudyConfig,
    cov: &ClusterCovariates,
    rng: &mut R,
) -> Result<(Vec<u8>, f64)> {
    let table = cluster_table(cfg, cov)?;
    Ok((sample_from_table(&table, rng), table.clipped_mass))
}

fn stream(seed: u64, replicate: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate * 2 + purpose);
    rng
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub mean_clipped_mass: f64,
    pub max_clipped_mass: f64,
}

/// Dataset for replicate `replicate` of `cfg`.
pub fn simulate_dataset(cfg: &StudyConfig, replicate: u64) -> Result<SimulatedData> {
    cfg.validate()?;
    let sampler = CovariateSampler::new(cfg)?;
    let mut cov_rng = stream(cfg.seed, replicate, STREAM_COVARIATES);
    let mut resp_rng = stream(cfg.seed, replicate, STREAM_RESPONSES);
    let mut clusters = Vec::with_capacity(cfg.n_clusters);
    let (mut total_clip, mut max_clip, mut heavy) = (0.0, 0.0f64, 0);
    for i in 0..cfg.n_clusters {
        let cov = sampler.draw(&mut cov_rng);
        let (y, clip) = sample_cluster(cfg, &cov, &mut resp_rng)?;
        total_clip += clip;
        max_clip = max_clip.max(clip);
        heavy += usize::from(clip > HEAVY_CLIP);
        clusters.push(ClusterData::new(format!("{}", i + 1), &y, cov.x, cov.z)?);
    }
    if heavy > 0 {
        warn!("replicate {replicate}: {heavy} clusters lost more than {HEAVY_CLIP} probability mass to clipping");
    }
    Ok(SimulatedData {
        dataset: Dataset::new(clusters, cfg.mean_names(), cfg.assoc_names(), true)?,
        mean_clipped_mass: total_clip / cfg.n_clusters as f64,
        max_clipped_mass: max_clip,
    })
}

/// One replicate's outcome under one penalty.
#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub lambda: f64,
    /// Truly nonzero coefficients estimated as nonzero.
    pub ps: usize,
    /// Truly zero coefficients estimated as nonzero.
    pub fd: usize,
    pub params: Params,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SelectionMetrics {
    pub penalty: PenaltyKind,
    pub mode: ModeKind,
    pub n_clusters: usize,
    pub ps_mean: f64,
    pub ps_sd: f64,
    pub fd_mean: f64,
    pub fd_sd: f64,
    pub lambda_mean: f64,
    pub lambda_sd: f64,
    pub records: Vec<ReplicateRecord>,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub metrics: Vec<SelectionMetrics>,
    /// `(replicate, message)` for replicates dropped from every summary.
    pub failures: Vec<(usize, String)>,
    pub mean_clipped_mass: f64,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Counts of (true positives, false discoveries) among the coefficients the mode selects.
pub fn selection_counts(mode: ModeKind, truth: &Params, estimate: &Params) -> (usize, usize) {
    let blocks: Vec<(&DVector<f64>, &DVector<f64>)> = match mode {
        ModeKind::MeanOnly => vec![(&truth.beta, &estimate.beta)],
        ModeKind::AssocOnly => vec![(&truth.alpha, &estimate.alpha)],
        ModeKind::Joint => vec![(&truth.beta, &estimate.beta), (&truth.alpha, &estimate.alpha)],
    };
    let (mut ps, mut fd) = (0, 0);
    for (t, e) in blocks {
        for (&tv, &ev) in t.iter().zip(e.iter()) {
            if ev != 0.0 {
                if tv != 0.0 {
                    ps += 1;
                } else {
                    fd += 1;
                }
            }
        }
    }
    (ps, fd)
}

fn run_replicate(cfg: &StudyConfig, replicate: usize, truth: &Params) -> Result<(Vec<ReplicateRecord>, f64)> {
    let sim = simulate_dataset(cfg, replicate as u64)?;
    let ds = &sim.dataset;
    let alr = fit_alr(ds, &Params::zeros(ds.p(), ds.q()), cfg.solver.tol, cfg.solver.max_outer)?;
    let mode = AnalysisMode::new(cfg.mode);
    let mut out = Vec::with_capacity(cfg.penalties.len());
    for &penalty in &cfg.penalties {
        let grid = if penalty == PenaltyKind::None {
            GridSpec::from_values(vec![0.0])?
        } else {
            cfg.grid.clone()
        };
        let (cm, ca) = penalties_for_mode(cfg.mode, penalty, 0.0, cfg.scad_a, true)?;
        let report = grid_search_from_alr(ds, &alr, &mode, &cm, &ca, &grid, &cfg.solver)?;
        let (ps, fd) = selection_counts(cfg.mode, truth, &report.chosen_fit.params);
        out.push(ReplicateRecord {
            replicate,
            lambda: report.chosen_lambda,
            ps,
            fd,
            converged: report.chosen_fit.converged(),
            params: report.chosen_fit.params,
        });
    }
    Ok((out, sim.mean_clipped_mass))
}

/// Runs `cfg.replicates` independent replicates (in parallel), each tuned
/// by BIC for every penalty on the same data. Fails if more than 10% of
/// replicates fail.
pub fn replicate_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    if cfg.replicates == 0 || cfg.penalties.is_empty() {
        return Err(Error::config(
            "simulate::replicate_study",
            "need at least one replicate and one penalty",
        ));
    }
    let truth = Params::new(cfg.beta_true.clone(), cfg.alpha_true.clone());
    let outcomes: Vec<Result<(Vec<ReplicateRecord>, f64)>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r, &truth))
        .collect();

    let mut per_penalty: Vec<Vec<ReplicateRecord>> = vec![Vec::new(); cfg.penalties.len()];
    let mut failures = Vec::new();
    let mut clip = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((records, c)) => {
                clip.push(c);
                for (slot, rec) in per_penalty.iter_mut().zip(records) {
                    slot.push(rec);
                }
            }
            Err(e) => {
                debug!("replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * cfg.replicates as f64 {
        return Err(Error::Study {
            failed: failures.len(),
            total: cfg.replicates,
        });
    }
    if !failures.is_empty() {
        warn!(
            "{} of {} replicates failed and were excluded",
            failures.len(),
            cfg.replicates
        );
    }
    let metrics = cfg
        .penalties
        .iter()
        .zip(per_penalty)
        .map(|(&penalty, records)| {
            let (ps_mean, ps_sd) = mean_sd(records.iter().map(|r| r.ps as f64));
            let (fd_mean, fd_sd) = mean_sd(records.iter().map(|r| r.fd as f64));
            let (lambda_mean, lambda_sd) = mean_sd(records.iter().map(|r| r.lambda));
            SelectionMetrics {
                penalty,
                mode: cfg.mode,
                n_clusters: cfg.n_clusters,
                ps_mean,
                ps_sd,
                fd_mean,
                fd_sd,
                lambda_mean,
                lambda_sd,
                records,
            }
        })
        .collect();
    Ok(StudyReport {
        metrics,
        failures,
        mean_clipped_mass: mean_sd(clip.iter().copied()).0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn independent_table_is_product() {
        let t = bahadur_pmf(&[0.3, 0.6], &[0.0]).unwrap();
        assert_abs_diff_eq!(t.probs[0b00], 0.7 * 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(t.probs[0b01], 0.3 * 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(t.probs[0b10], 0.7 * 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(t.probs[0b11], 0.3 * 0.6, epsilon = 1e-15);
        assert_eq!(t.clipped_mass, 0.0);
    }

    #[test]
    fn two_unit_table_matches_joint_probability() {
        let (mj, mk) = (0.4, 0.7);
        let nu = solve_pair_prob(mj, mk, 3.0).unwrap();
        let t = bahadur_pmf(&[mj, mk], &[rho_from_pair(mj, mk, nu)]).unwrap();
        assert_abs_diff_eq!(t.raw[0b11], nu, epsilon = 1e-14);
        assert_abs_diff_eq!(t.raw[0b01], mj - nu, epsilon = 1e-14);
        assert_abs_diff_eq!(t.raw[0b00], 1.0 - mj - mk + nu, epsilon = 1e-14);
    }

    #[test]
    fn strong_negative_correlation_is_clipped() {
        let t = bahadur_pmf(&[0.5, 0.5, 0.5], &[-0.9, -0.9, -0.9]).unwrap();
        assert!(t.clipped_mass > 0.0);
        assert!(t.probs.iter().all(|&p| p >= 0.0));
        assert_abs_diff_eq!(t.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(bahadur_pmf(&[], &[]).is_err());
        assert!(bahadur_pmf(&[0.5, 1.0], &[0.0]).is_err());
        assert!(bahadur_pmf(&[0.5, 0.5], &[]).is_err());
    }

    #[test]
    fn sampler_hits_point_mass() {
        let table = BahadurTable {
            raw: vec![0.0, 0.0, 0.0, 1.0],
            probs: vec![0.0, 0.0, 0.0, 1.0],
            clipped_mass: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(sample_from_table(&table, &mut rng), vec![1, 1]);
        }
    }

    #[test]
    fn default_config_shapes() {
        let cfg = StudyConfig::default();
        cfg.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cov = gen_covariates(&cfg, &mut rng).unwrap();
        assert_eq!(cov.x.shape(), (5, 11));
        assert_eq!(cov.z.shape(), (10, 11));
        assert!(cov.x.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(cfg.mean_names()[4], "x4");
        assert_eq!(cfg.assoc_names()[10], "v5");
    }

    #[test]
    fn replicates_are_reproducible_and_distinct() {
        let cfg = StudyConfig {
            n_clusters: 20,
            ..StudyConfig::default()
        };
        let a = simulate_dataset(&cfg, 3).unwrap();
        let b = simulate_dataset(&cfg, 3).unwrap();
        let c = simulate_dataset(&cfg, 4).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn selection_counting() {
        let truth = Params::new(
            DVector::from_vec(vec![1.0, 0.0, 2.0]),
            DVector::from_vec(vec![0.5, 0.0]),
        );
        let est = Params::new(
            DVector::from_vec(vec![0.9, 0.1, 0.0]),
            DVector::from_vec(vec![0.4, 0.2]),
        );
        assert_eq!(selection_counts(ModeKind::MeanOnly, &truth, &est), (1, 1));
        assert_eq!(selection_counts(ModeKind::AssocOnly, &truth, &est), (1, 1));
        assert_eq!(selection_counts(ModeKind::Joint, &truth, &est), (2, 2));
    }
}
