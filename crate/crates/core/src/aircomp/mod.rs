//! Over-the-air computation: p-norm pooling across devices and federated
//! aggregation schemes built on the Gaussian multiple-access channel.
//!
//! Pooling is nomographic: each device pre-processes its features with
//! `x^p`, the channel adds the transmissions, and the server post-processes
//! the noisy sum with `(.)^(1/p)`. Large `p` approaches the maximum, `p = 1`
//! gives the sum (divided by `N` in average mode).

pub mod feel;

use serde::{Deserialize, Serialize};

use crate::channels::GaussianMac;
use crate::error::{Error, Result};
use crate::simkernel::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Average,
    MaxApprox,
}

/// Pooling parameters. Channel noise comes from the MAC.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub p: f64,
    pub mode: PoolMode,
}

impl PoolingConfig {
    pub fn average() -> Self {
        PoolingConfig {
            p: 1.0,
            mode: PoolMode::Average,
        }
    }

    pub fn max_approx(p: f64) -> Self {
        PoolingConfig {
            p,
            mode: PoolMode::MaxApprox,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::invalid("p", "must be finite and at least 1"));
        }
        Ok(())
    }
}

/// `N` nonnegative feature vectors of a common dimension `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBatch {
    rows: Vec<Vec<f64>>,
}

impl FeatureBatch {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let d = rows[0].len();
        for r in &rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid("features", "entries must be finite and nonnegative"));
            }
        }
        Ok(FeatureBatch { rows })
    }

    /// Entries drawn uniformly from `[0, scale)`.
    pub fn uniform(devices: usize, dim: usize, scale: f64, rng: &mut RngStream) -> Result<Self> {
        let rows = (0..devices)
            .map(|_| (0..dim).map(|_| scale * rng.uniform()).collect())
            .collect();
        FeatureBatch::new(rows)
    }

    pub fn devices(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Component-wise maximum over devices.
    pub fn max(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.rows.iter().map(|r| r[j]).fold(0.0, f64::max))
            .collect()
    }
}

/// `(sum |x_i|^p)^(1/p)`; `p = inf` gives the maximum.
pub fn pnorm(x: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return x.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Pools the batch over the air, one channel use per component.
pub fn air_pool(
    batch: &FeatureBatch,
    cfg: &PoolingConfig,
    mac: &GaussianMac,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    mac.validate()?;
    let p = match cfg.mode {
        PoolMode::Average => 1.0,
        PoolMode::MaxApprox => cfg.p,
    };
    let inputs: Vec<Vec<f64>> = batch
        .rows()
        .iter()
        .map(|r| r.iter().map(|v| v.powf(p)).collect())
        .collect();
    let out = mac.superpose(&inputs, rng)?;
    let scale = match cfg.mode {
        PoolMode::Average => 1.0 / batch.devices() as f64,
        PoolMode::MaxApprox => 1.0,
    };
    Ok(out
        .received
        .into_iter()
        .map(|s| scale * s.max(0.0).powf(1.0 / p))
        .collect())
}

/// Mean absolute gap between the noiseless p-norm pool and the true maximum.
pub fn max_approx_error(batch: &FeatureBatch, p: f64) -> f64 {
    let d = batch.dim();
    let mut total = 0.0;
    for j in 0..d {
        let col: Vec<f64> = batch.rows().iter().map(|r| r[j]).collect();
        total += (pnorm(&col, p) - pnorm(&col, f64::INFINITY)).abs();
    }
    total / d as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(x: &[f64]) -> FeatureBatch {
        FeatureBatch::new(x.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    fn noiseless(n: usize) -> GaussianMac {
        GaussianMac::unit(n, 0.0)
    }

    #[test]
    fn average_mode_gives_the_mean() {
        let b = column(&[1.0, 2.0, 3.0]);
        let y = air_pool(&b, &PoolingConfig::average(), &noiseless(3), &mut RngStream::new(0, "a")).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn large_p_tends_to_the_max() {
        assert_eq!(pnorm(&[1.0, 2.0, 3.0], f64::INFINITY), 3.0);
        let b = column(&[1.0, 2.0, 3.0]);
        let mut rng = RngStream::new(0, "a");
        let y8 = air_pool(&b, &PoolingConfig::max_approx(8.0), &noiseless(3), &mut rng).unwrap()[0];
        let direct = (1.0f64 + 256.0 + 6561.0).powf(0.125);
        assert!((y8 - direct).abs() < 1e-12);
        assert!((y8 - 3.014).abs() < 1e-3);
    }

    #[test]
    fn one_hot_has_no_approximation_error() {
        let b = column(&[0.0, 0.0, 0.0, 4.5]);
        for p in [1.0, 2.0, 7.0, 64.0] {
            assert_eq!(max_approx_error(&b, p), 0.0);
        }
    }

    #[test]
    fn all_equal_error_has_closed_form() {
        let m = 0.7;
        let n = 8;
        let b = column(&vec![m; n]);
        let mut prev = f64::INFINITY;
        for p in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let e = max_approx_error(&b, p);
            let closed = m * ((n as f64).powf(1.0 / p) - 1.0);
            assert!((e - closed).abs() < 1e-12);
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn negative_noisy_sums_clamp_to_zero() {
        let b = column(&[0.0, 0.0]);
        let mac = GaussianMac::unit(2, 1.0);
        let mut rng = RngStream::new(4, "clamp");
        for _ in 0..50 {
            let y = air_pool(&b, &PoolingConfig::max_approx(2.0), &mac, &mut rng).unwrap();
            assert!(y[0] >= 0.0);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert_eq!(FeatureBatch::new(vec![]), Err(Error::EmptyBatch));
        assert!(FeatureBatch::new(vec![vec![-1.0]]).is_err());
        assert!(FeatureBatch::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        let b = column(&[1.0]);
        let mut rng = RngStream::new(0, "a");
        assert!(air_pool(&b, &PoolingConfig::max_approx(0.5), &noiseless(1), &mut rng).is_err());
    }

    #[test]
    fn truncated_devices_drop_out_of_the_sum() {
        let b = column(&[1.0, 2.0, 3.0]);
        let mac = GaussianMac {
            gains: vec![1.0, 0.1, 0.9],
            noise_var: 0.0,
            p_max: f64::INFINITY,
            gamma: 0.5,
        };
        let y = air_pool(&b, &PoolingConfig::average(), &mac, &mut RngStream::new(0, "t")).unwrap();
        assert!((y[0] - 4.0 / 3.0).abs() < 1e-12);
    }
}
