//! Link and multiple-access channel models.

use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkernel::{RngStream, SimTime, Timebase};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    /// Fixed delay in seconds.
    Deterministic { seconds: f64 },
    /// `d0 + Exp(rate)` seconds.
    ShiftedExponential { d0: f64, rate: f64 },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Deterministic { seconds: 0.0 }
    }
}

/// Point-to-point link with random delay and i.i.d. erasures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    #[serde(default)]
    pub delay: DelayModel,
    #[serde(default)]
    pub erasure_prob: f64,
}

impl LinkModel {
    pub fn ideal() -> Self {
        LinkModel::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.erasure_prob) {
            return Err(Error::invalid("erasure_prob", "must lie in [0, 1)"));
        }
        match self.delay {
            DelayModel::Deterministic { seconds } if seconds >= 0.0 && seconds.is_finite() => Ok(()),
            DelayModel::ShiftedExponential { d0, rate }
                if d0 >= 0.0 && d0.is_finite() && rate > 0.0 && rate.is_finite() =>
            {
                Ok(())
            }
            _ => Err(Error::invalid("delay", "delay must be non-negative with positive rate")),
        }
    }

    pub fn sample_delay(&self, tb: &Timebase, rng: &mut RngStream) -> u64 {
        match self.delay {
            DelayModel::Deterministic { seconds } => tb.ticks_for(seconds),
            DelayModel::ShiftedExponential { d0, rate } => {
                let extra: f64 = rng.sample(Exp::new(rate).expect("validated rate"));
                tb.ticks_for(d0 + extra)
            }
        }
    }

    /// Delivery instant of a packet sent at `now`, or `None` if erased.
    pub fn transmit(&self, now: SimTime, tb: &Timebase, rng: &mut RngStream) -> Option<SimTime> {
        // draw the erasure first so the delay stream stays aligned across erasure rates
        let u = rng.uniform();
        let delay = self.sample_delay(tb, rng);
        if u < self.erasure_prob {
            None
        } else {
            Some(now + delay)
        }
    }
}

/// q-ary symmetric channel used `uses` times per message.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteChannel {
    pub q: usize,
    pub eps: f64,
    pub uses: usize,
}

impl Default for DiscreteChannel {
    fn default() -> Self {
        DiscreteChannel {
            q: 2,
            eps: 0.0,
            uses: 2,
        }
    }
}

impl DiscreteChannel {
    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::invalid("q", "alphabet needs at least two symbols"));
        }
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::invalid("eps", "must lie in [0, 1)"));
        }
        if self.uses == 0 {
            return Err(Error::invalid("uses", "at least one channel use per message"));
        }
        Ok(())
    }

    /// Number of distinct words `q^uses`.
    pub fn words(&self) -> usize {
        self.q.pow(self.uses as u32)
    }

    /// Base-q digits of `message`, most significant first.
    pub fn encode(&self, message: usize) -> Vec<usize> {
        let mut digits = vec![0; self.uses];
        let mut m = message;
        for d in digits.iter_mut().rev() {
            *d = m % self.q;
            m /= self.q;
        }
        digits
    }

    pub fn decode(&self, symbols: &[usize]) -> usize {
        symbols.iter().fold(0, |acc, &s| acc * self.q + s)
    }

    /// Sends one word and returns the received word index.
    pub fn send_message(&self, message: usize, rng: &mut RngStream) -> Result<usize> {
        let rx = qsc_transmit(self, &self.encode(message), rng)?;
        Ok(self.decode(&rx))
    }
}

/// Flips each symbol with probability `eps` to a uniformly chosen other symbol.
pub fn qsc_transmit(ch: &DiscreteChannel, symbols: &[usize], rng: &mut RngStream) -> Result<Vec<usize>> {
    if let Some(&s) = symbols.iter().find(|&&s| s >= ch.q) {
        return Err(Error::SymbolOutOfAlphabet { symbol: s, q: ch.q });
    }
    Ok(symbols
        .iter()
        .map(|&s| {
            let u = rng.uniform();
            // always draw the replacement so streams stay aligned across eps
            let other = rng.below(ch.q as u64 - 1) as usize;
            if u < ch.eps {
                if other >= s {
                    other + 1
                } else {
                    other
                }
            } else {
                s
            }
        })
        .collect())
}

/// Gaussian multiple-access channel with truncated channel inversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMac {
    pub gains: Vec<f64>,
    pub noise_var: f64,
    #[serde(default = "unbounded")]
    pub p_max: f64,
    #[serde(default)]
    pub gamma: f64,
}

fn unbounded() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacOutput {
    pub received: Vec<f64>,
    /// Devices whose gain fell below the inversion threshold.
    pub excluded: Vec<usize>,
}

impl GaussianMac {
    /// `devices` unit-gain transmitters, unlimited power, no truncation.
    pub fn unit(devices: usize, noise_var: f64) -> Self {
        GaussianMac {
            gains: vec![1.0; devices],
            noise_var,
            p_max: f64::INFINITY,
            gamma: 0.0,
        }
    }

    pub fn devices(&self) -> usize {
        self.gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_var >= 0.0) {
            return Err(Error::invalid("noise_var", "must be non-negative"));
        }
        if !(self.p_max > 0.0) {
            return Err(Error::invalid("p_max", "must be positive"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("gamma", "must be non-negative"));
        }
        Ok(())
    }

    pub fn excluded_devices(&self) -> Vec<usize> {
        self.gains
            .iter()
            .enumerate()
            .filter(|(_, h)| h.abs() < self.gamma || **h == 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Superposes the precoded inputs of all included devices and adds noise.
    pub fn superpose(&self, inputs: &[Vec<f64>], rng: &mut RngStream) -> Result<MacOutput> {
        if inputs.len() != self.devices() {
            return Err(Error::DimensionMismatch {
                expected: self.devices(),
                got: inputs.len(),
            });
        }
        let dim = inputs.first().map_or(0, |v| v.len());
        if let Some(v) = inputs.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        let excluded = self.excluded_devices();
        let mut received = vec![0.0; dim];
        for (n, x) in inputs.iter().enumerate() {
            if excluded.contains(&n) {
                continue;
            }
            let h = self.gains[n];
            let s = 1.0 / h;
            if dim > 0 {
                let power = x.iter().map(|v| (s * v) * (s * v)).sum::<f64>() / dim as f64;
                if power > self.p_max {
                    return Err(Error::PowerLimitExceeded {
                        device: n,
                        power,
                        limit: self.p_max,
                    });
                }
            }
            for (acc, v) in received.iter_mut().zip(x) {
                *acc += h * (s * v);
            }
        }
        if self.noise_var > 0.0 {
            let sd = self.noise_var.sqrt();
            for acc in received.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *acc += sd * z;
            }
        }
        Ok(MacOutput { received, excluded })
    }
}

/// Convenience wrapper around [`GaussianMac::superpose`].
pub fn mac_superpose(mac: &GaussianMac, inputs: &[Vec<f64>], rng: &mut RngStream) -> Result<MacOutput> {
    mac.superpose(inputs, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkernel::Seeder;

    fn rng(name: &str) -> RngStream {
        Seeder::new(99).substream(name)
    }

    #[test]
    fn lossless_fixed_delay_link() {
        let link = LinkModel {
            delay: DelayModel::Deterministic { seconds: 3.0 },
            erasure_prob: 0.0,
        };
        let mut r = rng("l");
        for now in 0..50 {
            assert_eq!(link.transmit(SimTime(now), &Timebase::SECONDS, &mut r), Some(SimTime(now + 3)));
        }
    }

    #[test]
    fn near_certain_erasure() {
        let link = LinkModel {
            delay: DelayModel::default(),
            erasure_prob: 1.0 - 1e-12,
        };
        let mut r = rng("e");
        let delivered = (0..10_000)
            .filter(|_| link.transmit(SimTime(0), &Timebase::SECONDS, &mut r).is_some())
            .count();
        assert_eq!(delivered, 0);
        assert!(LinkModel { erasure_prob: 1.0, ..link }.validate().is_err());
    }

    #[test]
    fn empirical_erasure_rate_within_binomial_ci() {
        let link = LinkModel {
            delay: DelayModel::ShiftedExponential { d0: 0.01, rate: 50.0 },
            erasure_prob: 0.2,
        };
        let mut r = rng("rate");
        let n = 100_000;
        let erased = (0..n)
            .filter(|_| link.transmit(SimTime(0), &Timebase::MILLIS, &mut r).is_none())
            .count();
        let p = erased as f64 / n as f64;
        let sd = (0.2 * 0.8 / n as f64).sqrt();
        assert!((p - 0.2).abs() < 4.0 * sd, "{p}");
    }

    #[test]
    fn shifted_exponential_delay_is_at_least_shift() {
        let link = LinkModel {
            delay: DelayModel::ShiftedExponential { d0: 0.005, rate: 100.0 },
            erasure_prob: 0.0,
        };
        let mut r = rng("d");
        for _ in 0..1000 {
            let at = link.transmit(SimTime(10), &Timebase::MILLIS, &mut r).unwrap();
            assert!(at.0 >= 15);
        }
    }

    #[test]
    fn noiseless_qsc_is_identity() {
        let ch = DiscreteChannel { q: 5, eps: 0.0, uses: 3 };
        let syms = vec![0, 4, 2, 3, 1, 1];
        assert_eq!(qsc_transmit(&ch, &syms, &mut rng("q")).unwrap(), syms);
        assert_eq!(
            qsc_transmit(&ch, &[5], &mut rng("q")),
            Err(Error::SymbolOutOfAlphabet { symbol: 5, q: 5 })
        );
    }

    #[test]
    fn word_encoding_round_trips() {
        let ch = DiscreteChannel { q: 3, eps: 0.0, uses: 3 };
        for m in 0..ch.words() {
            assert_eq!(ch.decode(&ch.encode(m)), m);
        }
        assert_eq!(ch.encode(5), vec![0, 1, 2]);
    }

    fn plug_in_mi(pairs: &[(usize, usize)], q: usize) -> f64 {
        let n = pairs.len() as f64;
        let mut joint = vec![vec![0f64; q]; q];
        for &(a, b) in pairs {
            joint[a][b] += 1.0;
        }
        let px: Vec<f64> = joint.iter().map(|r| r.iter().sum::<f64>() / n).collect();
        let py: Vec<f64> = (0..q).map(|j| joint.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let mut mi = 0.0;
        for i in 0..q {
            for j in 0..q {
                let p = joint[i][j] / n;
                if p > 0.0 {
                    mi += p * (p / (px[i] * py[j])).log2();
                }
            }
        }
        mi
    }

    #[test]
    fn half_flip_binary_channel_carries_no_information() {
        let ch = DiscreteChannel { q: 2, eps: 0.5, uses: 1 };
        let mut r = rng("mi");
        let mut pairs = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let x = r.below(2) as usize;
            let y = qsc_transmit(&ch, &[x], &mut r).unwrap()[0];
            pairs.push((x, y));
        }
        assert!(plug_in_mi(&pairs, 2) < 0.01);
    }

    #[test]
    fn flip_rate_and_uniform_replacement() {
        let ch = DiscreteChannel { q: 4, eps: 0.1, uses: 1 };
        let mut r = rng("flip");
        let n = 100_000;
        let mut wrong = [0usize; 4];
        for _ in 0..n {
            let y = qsc_transmit(&ch, &[2], &mut r).unwrap()[0];
            if y != 2 {
                wrong[y] += 1;
            }
        }
        let flips: usize = wrong.iter().sum();
        let p = flips as f64 / n as f64;
        assert!((p - 0.1).abs() < 4.0 * (0.09 / n as f64).sqrt(), "{p}");
        for s in [0, 1, 3] {
            let share = wrong[s] as f64 / flips as f64;
            assert!((share - 1.0 / 3.0).abs() < 0.02, "{share}");
        }
    }

    #[test]
    fn noiseless_mac_is_exact_sum() {
        let mac = GaussianMac::unit(2, 0.0);
        let out = mac
            .superpose(&[vec![1.0, 2.0], vec![3.0, 4.0]], &mut rng("m"))
            .unwrap();
        assert_eq!(out.received, vec![4.0, 6.0]);
        let single = GaussianMac::unit(1, 0.0);
        assert_eq!(
            single.superpose(&[vec![0.5, -2.0]], &mut rng("m")).unwrap().received,
            vec![0.5, -2.0]
        );
    }

    #[test]
    fn mac_noise_variance() {
        let mac = GaussianMac::unit(1, 1.0);
        let out = mac.superpose(&[vec![0.0; 10_000]], &mut rng("nv")).unwrap();
        let n = out.received.len() as f64;
        let mean = out.received.iter().sum::<f64>() / n;
        let var = out.received.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // sd of the sample variance is sqrt(2/n) for unit Gaussian noise
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "{var}");
    }

    #[test]
    fn truncated_inversion_excludes_weak_devices() {
        let mac = GaussianMac {
            gains: vec![1.0, 0.2, 0.5, 0.05],
            noise_var: 0.0,
            p_max: f64::INFINITY,
            gamma: 0.3,
        };
        assert_eq!(mac.excluded_devices(), vec![1, 3]);
        let out = mac
            .superpose(&[vec![1.0], vec![10.0], vec![2.0], vec![100.0]], &mut rng("t"))
            .unwrap();
        assert_eq!(out.excluded, vec![1, 3]);
        assert!((out.received[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mac_rejects_mismatch_and_power_violations() {
        let mac = GaussianMac::unit(2, 0.0);
        assert!(matches!(
            mac.superpose(&[vec![1.0], vec![1.0, 2.0]], &mut rng("x")),
            Err(Error::DimensionMismatch { .. })
        ));
        let weak = GaussianMac {
            gains: vec![0.5, 1.0],
            noise_var: 0.0,
            p_max: 1.0,
            gamma: 0.0,
        };
        assert!(matches!(
            weak.superpose(&[vec![1.0], vec![1.0]], &mut rng("x")),
            Err(Error::PowerLimitExceeded { device: 0, .. })
        ));
    }
}
