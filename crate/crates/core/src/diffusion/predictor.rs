use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::latent::{ConditioningVector, LatentState};

/// A noise predictor `eps_hat(z, e, t)`.
///
/// Implementations must be deterministic in their inputs and callable from
/// several workers at once.
pub trait NoisePredictor: Send + Sync {
    fn predict(&self, z: &LatentState, e: &ConditioningVector, t: usize) -> Result<Vec<f64>>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict(&self, z: &LatentState, e: &ConditioningVector, t: usize) -> Result<Vec<f64>> {
        (**self).predict(z, e, t)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict(&self, z: &LatentState, e: &ConditioningVector, t: usize) -> Result<Vec<f64>> {
        (**self).predict(z, e, t)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, z: &LatentState, _e: &ConditioningVector, _t: usize) -> Result<Vec<f64>> {
        Ok(vec![0.0; z.dim()])
    }
}

/// Exact noise predictor for data distributed as `N(mu, sigma2 * I)`.
///
/// With `a = alpha_bar[t]` the posterior mean of the clean sample is
///
/// ```text
/// m = (sigma2 * sqrt(a) * z + (1 - a) * mu) / (sigma2 * a + 1 - a)
/// ```
///
/// and the prediction is `(z - sqrt(a) * m) / sqrt(1 - a)`. When a bias target
/// `e*` is set, `e - e*` is added to the prediction (elementwise if the
/// embedding has the latent's dimension, broadcast if it is a scalar), which
/// makes the excess denoising loss exactly `||e - e*||^2` per coordinate.
#[derive(Debug, Clone)]
pub struct GaussianOraclePredictor {
    mu: Vec<f64>,
    sigma2: f64,
    bias_target: Option<ConditioningVector>,
    schedule: NoiseSchedule,
}

impl GaussianOraclePredictor {
    /// `mu` either has the latent dimension or a single value broadcast to
    /// every coordinate.
    pub fn new(mu: Vec<f64>, sigma2: f64, schedule: NoiseSchedule) -> Result<Self> {
        if mu.is_empty() || mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("oracle mean must be non-empty and finite"));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid(format!(
                "oracle variance must be finite and >= 0, got {sigma2}"
            )));
        }
        Ok(Self {
            mu,
            sigma2,
            bias_target: None,
            schedule,
        })
    }

    pub fn with_bias_target(mut self, target: ConditioningVector) -> Self {
        self.bias_target = Some(target);
        self
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    fn mean_at(&self, k: usize) -> f64 {
        if self.mu.len() == 1 {
            self.mu[0]
        } else {
            self.mu[k]
        }
    }
}

impl NoisePredictor for GaussianOraclePredictor {
    fn predict(&self, z: &LatentState, e: &ConditioningVector, t: usize) -> Result<Vec<f64>> {
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::invalid(format!(
                "oracle prediction needs t in [1, {}], got {t}",
                self.schedule.steps()
            )));
        }
        let dim = z.dim();
        if self.mu.len() != 1 && self.mu.len() != dim {
            return Err(Error::invalid(format!(
                "oracle mean has {} entries but latent has {dim}",
                self.mu.len()
            )));
        }
        let a = self.schedule.alpha_bar(t);
        let sqrt_a = a.sqrt();
        let sqrt_one_minus = (1.0 - a).sqrt();
        let denom = self.sigma2 * a + (1.0 - a);
        let mut out: Vec<f64> = z
            .data()
            .iter()
            .enumerate()
            .map(|(k, &zk)| {
                let m = (self.sigma2 * sqrt_a * zk + (1.0 - a) * self.mean_at(k)) / denom;
                (zk - sqrt_a * m) / sqrt_one_minus
            })
            .collect();

        if let Some(target) = &self.bias_target {
            if target.len() != e.len() {
                return Err(Error::invalid(format!(
                    "conditioning has {} entries, bias target {}",
                    e.len(),
                    target.len()
                )));
            }
            let bias: Vec<f64> = e
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(a, b)| a - b)
                .collect();
            match bias.len() {
                1 => out.iter_mut().for_each(|x| *x += bias[0]),
                n if n == dim => out.iter_mut().zip(&bias).for_each(|(x, b)| *x += b),
                n => {
                    return Err(Error::invalid(format!(
                        "bias of length {n} cannot be applied to a latent of dimension {dim}"
                    )))
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::LinearBeta, 100).unwrap()
    }

    #[test]
    fn zero_variance_predicts_exact_noise() {
        let s = schedule();
        let mu = vec![0.3, -1.2];
        let p = GaussianOraclePredictor::new(mu.clone(), 0.0, s.clone()).unwrap();
        let eps = [0.7, -0.4];
        let t = 40;
        let a = s.alpha_bar(t);
        let z: Vec<f64> = mu
            .iter()
            .zip(&eps)
            .map(|(m, e)| a.sqrt() * m + (1.0 - a).sqrt() * e)
            .collect();
        let z = LatentState::from_vec(z).unwrap();
        let out = p.predict(&z, &ConditioningVector::zeros(1), t).unwrap();
        for (o, e) in out.iter().zip(&eps) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_bias_broadcasts() {
        let p = GaussianOraclePredictor::new(vec![0.0], 1.0, schedule())
            .unwrap()
            .with_bias_target(ConditioningVector::new(vec![0.5]).unwrap());
        let z = LatentState::from_vec(vec![0.0, 0.0, 0.0]).unwrap();
        let out = p
            .predict(&z, &ConditioningVector::new(vec![1.5]).unwrap(), 10)
            .unwrap();
        assert_eq!(out, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn timestep_zero_rejected() {
        let p = GaussianOraclePredictor::new(vec![0.0], 1.0, schedule()).unwrap();
        let z = LatentState::from_vec(vec![1.0]).unwrap();
        assert!(p.predict(&z, &ConditioningVector::zeros(1), 0).is_err());
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(GaussianOraclePredictor::new(vec![0.0], -1.0, schedule()).is_err());
    }
}
