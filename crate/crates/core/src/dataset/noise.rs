//! Simulated phone-grade GPS error.
//!
//! Each fix is displaced from the truth by a magnitude drawn from a log-normal
//! truncated to a fixed range, in a direction that drifts slowly: the heading is
//! `2π Φ(z_t)` for a unit Gaussian AR(1) sequence `z_t`, which keeps its
//! marginal uniform on [0, 2π) while neighbouring fixes point the same way.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::geodesy::{apply_delta, DeltaLocation, GeoPoint, Zone, MAX_DELTA_M};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Target mean of the error magnitude, meters.
    pub mean: f64,
    /// Target standard deviation of the error magnitude, meters.
    pub sd: f64,
    pub clip_min: f64,
    pub clip_max: f64,
    /// Lag-one correlation of the heading process.
    pub rho: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mean: 9.8772,
            sd: 11.7547,
            clip_min: 0.37419,
            clip_max: 61.7118,
            rho: 0.9,
            seed: 0,
        }
    }
}

/// A [`NoiseConfig`] with its log-normal parameters solved.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    config: NoiseConfig,
    /// Location and scale of the underlying normal; `None` for a degenerate clip range.
    log_params: Option<(f64, f64)>,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Mean and sd of `exp(N(mu, sigma²))` conditioned on `[lo, hi]`.
pub fn truncated_lognormal_moments(mu: f64, sigma: f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = std_normal();
    let alpha = (lo.ln() - mu) / sigma;
    let beta = (hi.ln() - mu) / sigma;
    let z = n.cdf(beta) - n.cdf(alpha);
    let raw = |k: f64| {
        (k * mu + 0.5 * k * k * sigma * sigma).exp()
            * (n.cdf(beta - k * sigma) - n.cdf(alpha - k * sigma))
            / z
    };
    let m1 = raw(1.0);
    let m2 = raw(2.0);
    (m1, (m2 - m1 * m1).max(0.0).sqrt())
}

/// Solves for (mu, sigma) whose truncated moments hit `mean` and `sd`.
fn fit_lognormal(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<(f64, f64)> {
    // untruncated moment match as the starting point, solved in (mu, ln sigma)
    let s2 = (1.0 + (sd / mean).powi(2)).ln();
    let mut x = [mean.ln() - 0.5 * s2, 0.5 * s2.ln()];
    let resid = |x: &[f64; 2]| {
        let (m, s) = truncated_lognormal_moments(x[0], x[1].exp(), lo, hi);
        [m / mean - 1.0, s / sd - 1.0]
    };
    let norm = |r: &[f64; 2]| r[0].hypot(r[1]);
    let mut r = resid(&x);
    for _ in 0..200 {
        if norm(&r) < 1e-13 {
            return Ok((x[0], x[1].exp()));
        }
        let h = 1e-7;
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut xp = x;
            xp[j] += h;
            let mut xm = x;
            xm[j] -= h;
            let (rp, rm) = (resid(&xp), resid(&xm));
            for i in 0..2 {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-300 || !det.is_finite() {
            break;
        }
        let step = [
            (jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            (jac[0][0] * r[1] - jac[1][0] * r[0]) / det,
        ];
        let mut t = 1.0;
        loop {
            let cand = [x[0] - t * step[0], x[1] - t * step[1]];
            let rc = resid(&cand);
            if rc.iter().all(|v| v.is_finite()) && norm(&rc) < norm(&r) {
                x = cand;
                r = rc;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(unattainable(mean, sd, lo, hi));
            }
        }
    }
    if norm(&r) < 1e-10 {
        Ok((x[0], x[1].exp()))
    } else {
        Err(unattainable(mean, sd, lo, hi))
    }
}

fn unattainable(mean: f64, sd: f64, lo: f64, hi: f64) -> Error {
    Error::Config(format!(
        "no truncated log-normal on [{lo}, {hi}] has mean {mean} and sd {sd}"
    ))
}

impl NoiseModel {
    pub fn fit(config: &NoiseConfig) -> Result<Self> {
        let c = config;
        if !(c.clip_min > 0.0 && c.clip_min <= c.clip_max && c.clip_max < MAX_DELTA_M) {
            return Err(Error::Config(format!(
                "clip range [{}, {}] must be positive, ordered and below 10 km",
                c.clip_min, c.clip_max
            )));
        }
        if !(c.rho > -1.0 && c.rho < 1.0) {
            return Err(Error::Config(format!("rho {} outside (-1, 1)", c.rho)));
        }
        let log_params = if c.clip_min == c.clip_max {
            None
        } else {
            if !(c.mean > c.clip_min && c.mean < c.clip_max && c.sd > 0.0) {
                return Err(unattainable(c.mean, c.sd, c.clip_min, c.clip_max));
            }
            Some(fit_lognormal(c.mean, c.sd, c.clip_min, c.clip_max)?)
        };
        Ok(Self {
            config: config.clone(),
            log_params,
        })
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.config
    }

    /// Parameters of the normal behind the log-normal, if the range is not a point.
    pub fn log_params(&self) -> Option<(f64, f64)> {
        self.log_params
    }

    /// Magnitude for a uniform variate `u` in [0, 1].
    fn magnitude(&self, u: f64) -> f64 {
        let (lo, hi) = (self.config.clip_min, self.config.clip_max);
        match self.log_params {
            None => lo,
            Some((mu, sigma)) => {
                let n = std_normal();
                let a = n.cdf((lo.ln() - mu) / sigma);
                let b = n.cdf((hi.ln() - mu) / sigma);
                let p = (a + u * (b - a)).clamp(a, b);
                (mu + sigma * n.inverse_cdf(p)).exp().clamp(lo, hi)
            }
        }
    }

    /// `n` error displacements, in order.
    pub fn sample_displacements(&self, n: usize) -> Vec<DeltaLocation> {
        let mut heading_rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut magnitude_rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        let rho = self.config.rho;
        let innovation = (1.0 - rho * rho).sqrt();
        let normal = std_normal();
        let mut z = heading_rng.sample::<f64, _>(StandardNormal);
        (0..n)
            .map(|i| {
                if i > 0 {
                    z = rho * z + innovation * heading_rng.sample::<f64, _>(StandardNormal);
                }
                let theta = std::f64::consts::TAU * normal.cdf(z);
                let m = self.magnitude(magnitude_rng.random::<f64>());
                DeltaLocation::new(m * theta.cos(), m * theta.sin())
                    .expect("clip range is far below the delta bound")
            })
            .collect()
    }
}

/// Displaces every truth point by simulated GPS error, in `zone`'s grid.
pub fn simulate_gps_noise(truth: &[GeoPoint], model: &NoiseModel, zone: Zone) -> Result<Vec<GeoPoint>> {
    if truth.is_empty() {
        return Err(Error::EmptyInput("truth track"));
    }
    truth
        .iter()
        .zip(model.sample_displacements(truth.len()))
        .map(|(p, d)| apply_delta(*p, d, zone))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fit_hits_moments() {
        let m = NoiseModel::fit(&NoiseConfig::default()).unwrap();
        let (mu, sigma) = m.log_params().unwrap();
        let (mean, sd) = truncated_lognormal_moments(mu, sigma, 0.37419, 61.7118);
        assert!((mean - 9.8772).abs() < 1e-9 && (sd - 11.7547).abs() < 1e-9);
    }

    #[test]
    fn impossible_moments_are_rejected() {
        let c = NoiseConfig {
            sd: 40.0,
            ..NoiseConfig::default()
        };
        assert!(NoiseModel::fit(&c).is_err());
        let c = NoiseConfig {
            mean: 70.0,
            ..NoiseConfig::default()
        };
        assert!(NoiseModel::fit(&c).is_err());
    }

    #[test]
    fn magnitude_quantiles_span_the_range() {
        let m = NoiseModel::fit(&NoiseConfig::default()).unwrap();
        assert!((m.magnitude(0.0) - 0.37419).abs() < 1e-9);
        assert!((m.magnitude(1.0) - 61.7118).abs() < 1e-6);
        assert!(m.magnitude(0.3) < m.magnitude(0.6));
    }
}
