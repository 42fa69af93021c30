#![allow(dead_code)]

use hpgee2::simulate::BlockLaw;
use hpgee2::StudyConfig;
use nalgebra::DVector;

/// Two mean covariates plus one of each other block: small enough that the
/// unpenalized fit exists at a hundred clusters.
pub fn small_design(n_clusters: usize) -> StudyConfig {
    let law = |dim, mean| BlockLaw {
        dim,
        mean,
        sigma: 1.0,
        rho: 0.5,
    };
    StudyConfig {
        n_clusters,
        x_law: law(2, 0.5),
        z_law: law(1, -0.2),
        w_law: law(1, 0.5),
        v_law: law(1, -0.2),
        beta_true: DVector::from_vec(vec![-0.5, 1.0, 0.0, -0.5]),
        alpha_true: DVector::from_vec(vec![0.693, 0.3, 0.0]),
        ..StudyConfig::default()
    }
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
