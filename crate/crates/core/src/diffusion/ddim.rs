//! Forward noising, deterministic DDIM inversion and the reverse chain.

use crate::diffusion::{NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::latent::{dot, ConditioningVector, LatentState, RngStream};

const INVERSION_MAX_ITERS: usize = 64;
const INVERSION_TOL: f64 = 1e-15;

/// `sqrt(a) * z0 + sqrt(1 - a) * eps` with fresh `eps`, tagged with `t`.
pub fn forward_sample(
    z0: &LatentState,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<LatentState> {
    schedule.check_timestep(t)?;
    if let Some(tag) = z0.timestep().filter(|&tag| tag != 0) {
        return Err(Error::invalid(format!(
            "forward sampling starts from a clean latent, got timestep {tag}"
        )));
    }
    let a = schedule.alpha_bar(t);
    let noise = rng.standard_normal_vector(z0.dim())?;
    let (signal, spread) = (a.sqrt(), (1.0 - a).sqrt());
    let data = z0
        .data()
        .iter()
        .zip(&noise)
        .map(|(z, n)| signal * z + spread * n)
        .collect();
    z0.with_data(data, Some(t))
}

/// The DDIM update from noise level `a_from` to `a_to` given a prediction.
fn ddim_update(z: &[f64], eps: &[f64], a_from: f64, a_to: f64) -> Vec<f64> {
    let (sf, nf) = (a_from.sqrt(), (1.0 - a_from).sqrt());
    let (st, nt) = (a_to.sqrt(), (1.0 - a_to).sqrt());
    z.iter()
        .zip(eps)
        .map(|(&zk, &ek)| st * ((zk - nf * ek) / sf) + nt * ek)
        .collect()
}

fn predict_checked<P: NoisePredictor + ?Sized>(
    p: &P,
    z: &LatentState,
    e: &ConditioningVector,
    t: usize,
) -> Result<Vec<f64>> {
    let eps = p.predict(z, e, t).map_err(|err| match err {
        Error::NumericFailure { message, .. } => Error::numeric(message, Some(t)),
        other => other,
    })?;
    if eps.len() != z.dim() {
        return Err(Error::invalid(format!(
            "predictor returned {} values for a latent of dimension {}",
            eps.len(),
            z.dim()
        )));
    }
    if let Some(k) = eps.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric(
            format!("predictor output {k} is not finite"),
            Some(t),
        ));
    }
    Ok(eps)
}

/// Runs the deterministic reverse chain from `z_t.timestep()` down to 0.
pub fn ddim_reverse_chain<P: NoisePredictor + ?Sized>(
    z_t: &LatentState,
    e: &ConditioningVector,
    schedule: &NoiseSchedule,
    p: &P,
) -> Result<LatentState> {
    let start = z_t
        .timestep()
        .ok_or_else(|| Error::invalid("reverse chain needs a timestep-tagged latent"))?;
    schedule.check_timestep(start)?;
    let mut z = z_t.clone();
    for t in (1..=start).rev() {
        let eps = predict_checked(p, &z, e, t)?;
        let next = ddim_update(z.data(), &eps, schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
        z = z.with_data(next, Some(t - 1))?;
    }
    Ok(z)
}

/// Deterministic DDIM inversion from a clean latent to `t_target`.
///
/// Each step `t-1 -> t` solves the implicit equation
/// `reverse_step(z_t) = z_{t-1}` so that the reverse chain with the same
/// predictor maps the result back onto `z0`. The solve starts from the usual
/// explicit guess (prediction evaluated at `z_{t-1}`) and refines it by
/// fixed-point iteration with depth-one Anderson mixing, which keeps
/// converging on steps where the plain iteration barely contracts (the last
/// steps of schedules whose `alpha_bar` drops to ~0). Consumes no randomness.
pub fn ddim_invert<P: NoisePredictor + ?Sized>(
    z0: &LatentState,
    e: &ConditioningVector,
    schedule: &NoiseSchedule,
    p: &P,
    t_target: usize,
) -> Result<LatentState> {
    schedule.check_timestep(t_target)?;
    let mut z = z0.clone().with_timestep(0);
    for t in 1..=t_target {
        let (a_prev, a_t) = (schedule.alpha_bar(t - 1), schedule.alpha_bar(t));
        let prev = z.data().to_vec();
        let probe = z.with_data(prev.clone(), Some(t))?;
        let eps = predict_checked(p, &probe, e, t)?;
        let step = |eps: &[f64]| ddim_update(&prev, eps, a_prev, a_t);
        let mut current = step(&eps);

        // A residual r = F(z) - z maps to a reverse-step error of
        // sqrt(a_prev / a_t) * |r|.
        let amplification = (a_prev / a_t).sqrt();
        let scale = 1.0 + prev.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut best = current.clone();
        let mut best_err = f64::INFINITY;
        let mut last: Option<(Vec<f64>, Vec<f64>)> = None;
        for _ in 0..INVERSION_MAX_ITERS {
            let state = z.with_data(current.clone(), Some(t))?;
            let mapped = step(&predict_checked(p, &state, e, t)?);
            let residual: Vec<f64> = mapped.iter().zip(&current).map(|(f, x)| f - x).collect();
            let err = amplification * residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            if err < best_err {
                best_err = err;
                best = current.clone();
            } else if err > 4.0 * best_err {
                // Diverging; keep the closest iterate.
                break;
            }
            if err <= INVERSION_TOL * scale {
                break;
            }
            let next = match &last {
                Some((f_old, r_old)) => {
                    let dr: Vec<f64> = residual.iter().zip(r_old).map(|(a, b)| a - b).collect();
                    let denom = dot(&dr, &dr);
                    if denom > 0.0 {
                        let gamma = dot(&residual, &dr) / denom;
                        mapped
                            .iter()
                            .zip(f_old)
                            .map(|(f, fo)| f - gamma * (f - fo))
                            .collect()
                    } else {
                        mapped.clone()
                    }
                }
                None => mapped.clone(),
            };
            last = Some((mapped, residual));
            current = next;
        }
        z = z.with_data(best, Some(t))?;
    }
    Ok(z.with_timestep(t_target))
}
