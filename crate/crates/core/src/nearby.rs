//! Spherical nearby sampling around a noisy latent.
//!
//! A direction is drawn from `N(0, I)`, projected onto the tangent plane of
//! `z0`, normalised, stepped by `delta` and the result rescaled back onto the
//! sphere of radius `||z0||`. `delta` is in absolute latent units; for a
//! forward-diffused latent with `||z0|| ~ sqrt(dim)` the angular offset of
//! every sample is `atan(delta / ||z0||)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{dot, norm, LatentState, RngStream};

const MAX_DIRECTION_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearbyConfig {
    pub delta: f64,
    pub count: usize,
    #[serde(default = "default_min_direction_norm")]
    pub min_direction_norm: f64,
}

fn default_min_direction_norm() -> f64 {
    1e-12
}

impl NearbyConfig {
    pub fn new(delta: f64, count: usize) -> Self {
        Self {
            delta,
            count,
            min_direction_norm: default_min_direction_norm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid(format!(
                "sampling distance must be > 0, got {}",
                self.delta
            )));
        }
        if self.count == 0 {
            return Err(Error::invalid("sample count must be >= 1"));
        }
        if !(self.min_direction_norm > 0.0) {
            return Err(Error::invalid("degeneracy threshold must be > 0"));
        }
        Ok(())
    }
}

/// Removes the component of `eta` along `z0`.
pub fn project_to_tangent(eta: &[f64], z0: &LatentState) -> Result<Vec<f64>> {
    if eta.len() != z0.dim() {
        return Err(Error::invalid(format!(
            "direction has {} entries, latent {}",
            eta.len(),
            z0.dim()
        )));
    }
    let zz = dot(z0.data(), z0.data());
    if zz == 0.0 {
        return Err(Error::invalid("tangent projection undefined at the origin"));
    }
    let coef = dot(z0.data(), eta) / zz;
    let mut out: Vec<f64> = eta
        .iter()
        .zip(z0.data())
        .map(|(e, z)| e - coef * z)
        .collect();
    // One re-orthogonalisation pass removes the residual left by rounding.
    let residual = dot(z0.data(), &out) / zz;
    out.iter_mut()
        .zip(z0.data())
        .for_each(|(o, z)| *o -= residual * z);
    Ok(out)
}

/// Steps `delta` along the unit tangent direction `d` and rescales onto the
/// sphere of `z0`. Exposed so exact-value checks can force a direction.
pub fn perturb_along(z0: &LatentState, direction: &[f64], delta: f64) -> Result<LatentState> {
    if direction.len() != z0.dim() {
        return Err(Error::invalid("direction dimension mismatch"));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("delta must be >= 0, got {delta}")));
    }
    let radius = z0.norm();
    if radius == 0.0 {
        return Err(Error::invalid("cannot perturb on a zero-radius shell"));
    }
    if delta == 0.0 {
        return Ok(z0.clone());
    }
    let stepped: Vec<f64> = z0
        .data()
        .iter()
        .zip(direction)
        .map(|(z, d)| z + delta * d)
        .collect();
    let scale = radius / norm(&stepped);
    let data = stepped.into_iter().map(|x| x * scale).collect();
    z0.with_data(data, z0.timestep())
}

/// Draws a unit tangent direction at `z0`, redrawing degenerate draws.
pub fn tangent_direction(
    z0: &LatentState,
    min_direction_norm: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if z0.dim() < 2 {
        return Err(Error::invalid(
            "tangent space of a one-dimensional latent is trivial",
        ));
    }
    for _ in 0..MAX_DIRECTION_ATTEMPTS {
        let eta = rng.standard_normal_vector(z0.dim())?;
        let projected = project_to_tangent(&eta, z0)?;
        let len = norm(&projected);
        if len >= min_direction_norm {
            return Ok(projected.into_iter().map(|x| x / len).collect());
        }
    }
    Err(Error::numeric(
        format!("{MAX_DIRECTION_ATTEMPTS} consecutive degenerate tangent directions"),
        z0.timestep(),
    ))
}

pub fn perturb_on_shell(z0: &LatentState, delta: f64, rng: &mut RngStream) -> Result<LatentState> {
    perturb_on_shell_with(z0, delta, default_min_direction_norm(), rng)
}

fn perturb_on_shell_with(
    z0: &LatentState,
    delta: f64,
    min_direction_norm: f64,
    rng: &mut RngStream,
) -> Result<LatentState> {
    if z0.norm() == 0.0 {
        return Err(Error::invalid("cannot perturb on a zero-radius shell"));
    }
    if delta == 0.0 {
        return Ok(z0.clone());
    }
    let d = tangent_direction(z0, min_direction_norm, rng)?;
    perturb_along(z0, &d, delta)
}

/// `cfg.count` perturbations; sample `i` draws from `RngStream::new(seed, i)`.
pub fn sample_neighbors(z0: &LatentState, cfg: &NearbyConfig, seed: u64) -> Result<Vec<LatentState>> {
    sample_neighbors_with(z0, cfg, |i| RngStream::new(seed, i as u64))
}

/// Like [`sample_neighbors`] with a caller-chosen stream per sample index.
pub fn sample_neighbors_with<F>(
    z0: &LatentState,
    cfg: &NearbyConfig,
    stream_for: F,
) -> Result<Vec<LatentState>>
where
    F: Fn(usize) -> RngStream + Sync,
{
    cfg.validate()?;
    (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_for(i);
            perturb_on_shell_with(z0, cfg.delta, cfg.min_direction_norm, &mut rng)
        })
        .collect()
}

/// Chord length `||out - z0||` for any sample at distance `delta` from a shell
/// of radius `radius`.
pub fn expected_chord(radius: f64, delta: f64) -> f64 {
    let r = radius / (radius * radius + delta * delta).sqrt();
    (radius * radius * (r - 1.0).powi(2) + delta * delta * r * r).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latent(v: &[f64]) -> LatentState {
        LatentState::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn tangent_examples() {
        assert_eq!(project_to_tangent(&[1.0, 1.0], &latent(&[1.0, 0.0])).unwrap(), vec![0.0, 1.0]);
        assert_eq!(project_to_tangent(&[3.0, 5.0], &latent(&[0.0, 2.0])).unwrap(), vec![3.0, 0.0]);
        let parallel = project_to_tangent(&[2.0, 0.0], &latent(&[1.0, 0.0])).unwrap();
        assert_eq!(parallel, vec![0.0, 0.0]);
        assert!(norm(&parallel) < default_min_direction_norm());
    }

    #[test]
    fn tangent_at_origin_rejected() {
        assert!(project_to_tangent(&[1.0, 1.0], &latent(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn zero_delta_is_identity() {
        let z0 = latent(&[0.3, -0.4, 1.2]);
        let out = perturb_on_shell(&z0, 0.0, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(out, z0);
    }

    #[test]
    fn forced_direction_example() {
        let out = perturb_along(&latent(&[1.0, 0.0]), &[0.0, 1.0], 1.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.data()[0] - h).abs() < 1e-15);
        assert!((out.data()[1] - h).abs() < 1e-15);
    }

    #[test]
    fn chord_matches_closed_form() {
        let mut rng = RngStream::new(4, 0);
        let z0 = LatentState::from_vec(vec![0.6, 0.8, 0.0, 0.0]).unwrap();
        let out = perturb_on_shell(&z0, 1.0, &mut rng).unwrap();
        let diff: Vec<f64> = out.data().iter().zip(z0.data()).map(|(a, b)| a - b).collect();
        let chord = norm(&diff);
        let closed = 2.0 * (0.5 * 1.0f64.atan()).sin();
        assert!((chord - closed).abs() < 1e-12);
        assert!((expected_chord(1.0, 1.0) - 0.76537).abs() < 1e-5);
    }

    #[test]
    fn one_dimensional_latent_rejected() {
        let z0 = latent(&[2.0]);
        assert!(matches!(
            perturb_on_shell(&z0, 1.0, &mut RngStream::new(0, 0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_sample() {
        let z0 = latent(&[1.0, 2.0, 3.0]);
        let out = sample_neighbors(&z0, &NearbyConfig::new(0.5, 1), 9).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].norm() - z0.norm()).abs() <= 1e-12 * z0.norm());
    }

    #[test]
    fn samples_are_seed_deterministic_and_prefix_stable() {
        let z0 = latent(&[0.5, -1.0, 2.0, 0.25]);
        let a = sample_neighbors(&z0, &NearbyConfig::new(1.0, 4), 3).unwrap();
        let b = sample_neighbors(&z0, &NearbyConfig::new(1.0, 8), 3).unwrap();
        assert_eq!(a[..], b[..4]);
    }

    #[test]
    fn invalid_config() {
        assert!(NearbyConfig::new(0.0, 3).validate().is_err());
        assert!(NearbyConfig::new(1.0, 0).validate().is_err());
    }
}
