//! Denoising loss and gradient-descent inversion of the conditioning vector.

use serde::{Deserialize, Serialize};

use crate::diffusion::{NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::latent::{dot, ConditioningVector, LatentState, RngStream};

/// Monte-Carlo estimate of `E_{t, eps} ||eps - eps_hat(z_t, e, t)||^2` with `t`
/// uniform in `[1, T]`. Consumes `n` draws from `rng`.
pub fn dpm_loss<P: NoisePredictor + ?Sized>(
    z0: &LatentState,
    e: &ConditioningVector,
    schedule: &NoiseSchedule,
    p: &P,
    rng: &mut RngStream,
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("loss needs at least one sample"));
    }
    let mut total = 0.0;
    for _ in 0..n {
        let t = rng.uniform_int(1, schedule.steps());
        let eps = rng.standard_normal_vector(z0.dim())?;
        let a = schedule.alpha_bar(t);
        let (signal, spread) = (a.sqrt(), (1.0 - a).sqrt());
        let noisy: Vec<f64> = z0
            .data()
            .iter()
            .zip(&eps)
            .map(|(z, n)| signal * z + spread * n)
            .collect();
        let noisy = z0.with_data(noisy, Some(t))?;
        let pred = p.predict(&noisy, e, t)?;
        if pred.len() != eps.len() {
            return Err(Error::invalid("predictor output dimension mismatch"));
        }
        let diff: Vec<f64> = eps.iter().zip(&pred).map(|(a, b)| a - b).collect();
        total += dot(&diff, &diff);
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("denoising loss is not finite", None));
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub loss_samples: usize,
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("inversion learning rate must be > 0"));
        }
        if self.loss_samples == 0 {
            return Err(Error::invalid("inversion needs at least one loss sample"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionOutcome {
    pub embedding: ConditioningVector,
    /// Loss on a fixed validation substream before the first update and after
    /// each update (`steps + 1` entries).
    pub loss_trace: Vec<f64>,
}

const VALIDATION_STREAM: u64 = u64::MAX;

/// Gradient descent on `dpm_loss` over the conditioning vector.
///
/// Iteration `j` draws its loss samples from `rng.fork(j)`; both sides of each
/// central difference replay that same substream. The step for coordinate `k`
/// is `1e-4 * (1 + |e_k|)`.
pub fn invert_conditioning<P: NoisePredictor + ?Sized>(
    z0: &LatentState,
    e_init: &ConditioningVector,
    cfg: &InversionConfig,
    schedule: &NoiseSchedule,
    p: &P,
    rng: &RngStream,
) -> Result<InversionOutcome> {
    cfg.validate()?;
    let validation = rng.fork(VALIDATION_STREAM);
    let eval = |e: &[f64], stream: &RngStream| -> Result<f64> {
        let e = ConditioningVector::new(e.to_vec())
            .map_err(|_| Error::numeric("conditioning vector became non-finite", None))?;
        dpm_loss(z0, &e, schedule, p, &mut stream.clone(), cfg.loss_samples)
    };

    let mut e = e_init.as_slice().to_vec();
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(eval(&e, &validation)?);
    for j in 0..cfg.steps {
        let stream = rng.fork(j as u64);
        let mut grad = vec![0.0; e.len()];
        for k in 0..e.len() {
            let h = 1e-4 * (1.0 + e[k].abs());
            let mut plus = e.clone();
            plus[k] += h;
            let mut minus = e.clone();
            minus[k] -= h;
            grad[k] = (eval(&plus, &stream)? - eval(&minus, &stream)?) / (2.0 * h);
        }
        for (ek, gk) in e.iter_mut().zip(&grad) {
            *ek -= cfg.learning_rate * gk;
        }
        trace.push(eval(&e, &validation)?);
    }
    Ok(InversionOutcome {
        embedding: ConditioningVector::new(e)?,
        loss_trace: trace,
    })
}
