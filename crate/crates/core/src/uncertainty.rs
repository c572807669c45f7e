//! Monte-Carlo dropout sampling and its aleatoric/epistemic decomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::net::{forward_heads_mc, symmetrize, DensityPrediction, NetworkParams};

pub const DEFAULT_SAMPLES: usize = 30;

/// Aggregate of `n_samples` dropout passes, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate {
    pub mu_hat: DVector<f64>,
    pub sigma_a_hat: DMatrix<f64>,
    pub sigma_e_hat: DMatrix<f64>,
    pub sigma_total: DMatrix<f64>,
    pub n_samples: usize,
}

/// `n` masked forward passes of one input, with masks seeded by `seed`.
pub fn dropout_sample_predict(params: &NetworkParams, x: &[f64], n: usize, seed: u64) -> Result<Vec<DensityPrediction>> {
    if n == 0 {
        return Err(Error::Config("dropout sample count must be at least 1".into()));
    }
    let heads = forward_heads_mc(params, x, 1, n, &[seed])?;
    let mode = params.config.covariance_mode;
    Ok((0..n)
        .map(|k| DensityPrediction::from_heads(heads.mu_row(k), heads.raw_row(k), mode))
        .collect())
}

/// Sample mean of the means, mean of the aleatoric covariances and the
/// unbiased sample covariance of the means.
pub fn aggregate(samples: &[DensityPrediction]) -> Result<UncertaintyEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::EpistemicUndefined(n));
    }
    let c = samples[0].mu.len();
    // Centering on the first sample makes identical samples give a mean
    // equal to each of them, hence an exactly zero covariance.
    let pivot = &samples[0].mu;
    let mut shift = DVector::zeros(c);
    let mut sigma_a = DMatrix::zeros(c, c);
    for s in samples {
        if s.mu.len() != c {
            return Err(Error::shape("dropout sample mean", c, s.mu.len()));
        }
        shift += &s.mu - pivot;
        sigma_a += &s.sigma_a;
    }
    let mu_hat = pivot + shift / n as f64;
    sigma_a /= n as f64;
    let mut sigma_e = DMatrix::zeros(c, c);
    for s in samples {
        let d = &s.mu - &mu_hat;
        sigma_e.ger(1.0, &d, &d, 1.0);
    }
    sigma_e /= (n - 1) as f64;
    let sigma_a_hat = symmetrize(&sigma_a);
    let sigma_e_hat = symmetrize(&sigma_e);
    let sigma_total = &sigma_a_hat + &sigma_e_hat;
    Ok(UncertaintyEstimate {
        mu_hat,
        sigma_a_hat,
        sigma_e_hat,
        sigma_total,
        n_samples: n,
    })
}

/// MC-dropout estimates for a batch of flattened windows, one mask seed
/// per row. Rows are processed in chunks to bound memory.
pub fn mc_predict(params: &NetworkParams, inputs: &[f64], seeds: &[u64], n: usize) -> Result<Vec<UncertaintyEstimate>> {
    const CHUNK: usize = 128;
    let d = params.config.input_dim();
    let batch = seeds.len();
    if inputs.len() != batch * d {
        return Err(Error::shape("input batch", batch * d, inputs.len()));
    }
    let mode = params.config.covariance_mode;
    let mut out = Vec::with_capacity(batch);
    for start in (0..batch).step_by(CHUNK) {
        let end = (start + CHUNK).min(batch);
        let heads = forward_heads_mc(params, &inputs[start * d..end * d], end - start, n, &seeds[start..end])?;
        for b in 0..end - start {
            let samples: Vec<DensityPrediction> = (0..n)
                .map(|k| {
                    let r = b * n + k;
                    DensityPrediction::from_heads(heads.mu_row(r), heads.raw_row(r), mode)
                })
                .collect();
            out.push(aggregate(&samples)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{CovarianceMode, NetworkConfig};

    fn pred(mu: &[f64]) -> DensityPrediction {
        let c = mu.len();
        DensityPrediction {
            mu: DVector::from_column_slice(mu),
            chol_l: DMatrix::identity(c, c),
            sigma_a: DMatrix::identity(c, c),
        }
    }

    fn small(dropout: f64) -> NetworkParams {
        NetworkParams::init(&NetworkConfig {
            contracts: 3,
            window_len: 5,
            common_layers: vec![24, 12],
            branch_layers: vec![8],
            covariance_mode: CovarianceMode::Full,
            dropout_rate: dropout,
            l2_lambda: 0.0,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn two_sample_scalar_case() {
        let e = aggregate(&[pred(&[0.0]), pred(&[2.0])]).unwrap();
        assert_eq!(e.mu_hat[0], 1.0);
        assert_eq!(e.sigma_e_hat[(0, 0)], 2.0);
        assert_eq!(e.sigma_total[(0, 0)], 3.0);
    }

    #[test]
    fn identical_samples_have_no_epistemic_spread() {
        let e = aggregate(&vec![pred(&[0.3, -1.0]); 5]).unwrap();
        assert_eq!(e.sigma_e_hat, DMatrix::zeros(2, 2));
    }

    #[test]
    fn needs_two_samples() {
        assert!(matches!(aggregate(&[pred(&[1.0])]), Err(Error::EpistemicUndefined(1))));
    }

    #[test]
    fn no_dropout_gives_identical_passes() {
        let p = small(0.0);
        let x = vec![0.4; 15];
        let s = dropout_sample_predict(&p, &x, 4, 1).unwrap();
        assert!(s.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(aggregate(&s).unwrap().sigma_e_hat, DMatrix::zeros(3, 3));
    }

    #[test]
    fn seeded_and_batch_independent() {
        let p = small(0.3);
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = dropout_sample_predict(&p, &x[..15], 6, 9).unwrap();
        let b = dropout_sample_predict(&p, &x[..15], 6, 9).unwrap();
        assert_eq!(a, b);
        let batched = mc_predict(&p, &x, &[9, 10], 6).unwrap();
        assert_eq!(batched[0], aggregate(&a).unwrap());
        let alone = mc_predict(&p, &x[15..], &[10], 6).unwrap();
        assert_eq!(batched[1], alone[0]);
        assert!(batched[0].sigma_e_hat.trace() > 0.0);
    }

    #[test]
    fn passes_differ_under_dropout() {
        let p = small(0.3);
        let x = vec![0.5; 15];
        let s = dropout_sample_predict(&p, &x, 3, 2).unwrap();
        assert_ne!(s[0], s[1]);
    }
}
