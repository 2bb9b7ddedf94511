//! Noise schedules and the exact forward / reverse kernels of the two
//! diffusion processes: a variance-exploding Gaussian process on the
//! continuous block and an absorbing (masking) process on the one-hot
//! channels.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schedule constants shared by both processes.
///
/// The continuous noise level follows the power-mean interpolation
/// `sigma(u) = (sigma_min^(1/rho) + u (sigma_max^(1/rho) - sigma_min^(1/rho)))^rho`,
/// the keep-probability of the masking process is linear,
/// `alpha(u) = 1 - (1 - eps_mask) u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub eps_mask: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            eps_mask: 1e-3,
        }
    }
}

fn check_u(u: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!(
            "diffusion time u must lie in [0,1], got {u}"
        )));
    }
    Ok(())
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min) {
            return Err(Error::InvalidArgument(
                "schedule needs 0 < sigma_min < sigma_max".into(),
            ));
        }
        if !(self.rho > 0.0) {
            return Err(Error::InvalidArgument("schedule needs rho > 0".into()));
        }
        if !(self.eps_mask > 0.0 && self.eps_mask < 1.0) {
            return Err(Error::InvalidArgument(
                "schedule needs eps_mask in (0,1)".into(),
            ));
        }
        Ok(())
    }

    /// Continuous noise level `sigma(u)`.
    pub fn sigma_cont(&self, u: f64) -> Result<f64> {
        check_u(u)?;
        let inv = 1.0 / self.rho;
        let lo = self.sigma_min.powf(inv);
        let hi = self.sigma_max.powf(inv);
        Ok((lo + u * (hi - lo)).powf(self.rho))
    }

    /// Keep-probability `alpha(u)` and its derivative `alpha_dot` (constant
    /// for the linear schedule).
    pub fn alpha_disc(&self, u: f64) -> Result<(f64, f64)> {
        check_u(u)?;
        let slope = 1.0 - self.eps_mask;
        Ok((1.0 - slope * u, -slope))
    }
}

/// Perturb a continuous block: `z_u = z_0 + sigma(u) eps` with `eps` i.i.d.
/// standard normal. The drawn `eps` is returned as the regression target.
pub fn perturb_continuous<R: Rng>(
    z0: &Array2<f64>,
    u: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "continuous block contains non-finite entries".into(),
        ));
    }
    let sigma = sched.sigma_cont(u)?;
    let mut eps = Array2::zeros(z0.raw_dim());
    for e in eps.iter_mut() {
        *e = StandardNormal.sample(rng);
    }
    let zu = z0 + &(sigma * &eps);
    Ok((zu, eps))
}

/// Perturb one-hot channels: each row is independently kept with probability
/// `alpha(u)` and otherwise replaced by the mask vertex (last slot).
pub fn perturb_discrete<R: Rng>(
    z0: &[Array2<f64>],
    u: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    let (alpha, _) = sched.alpha_disc(u)?;
    let mut out = Vec::with_capacity(z0.len());
    for ch in z0 {
        let width = ch.ncols();
        let mut zu = ch.clone();
        for mut row in zu.rows_mut() {
            if rng.random::<f64>() >= alpha {
                row.fill(0.0);
                row[width - 1] = 1.0;
            }
        }
        out.push(zu);
    }
    Ok(out)
}

/// Exact reverse posterior of the masking process for a single position
/// (Bayes over the absorbing kernel). `z_u` is the current one-hot state of
/// width `C + 1`; `z0_hat` is a probability vector over the `C` true
/// categories. Returns a distribution over the `C + 1` states at time `s`.
pub fn reverse_posterior_discrete(
    z_u: ArrayView1<f64>,
    z0_hat: &[f64],
    alpha_s: f64,
    alpha_u: f64,
) -> Result<Vec<f64>> {
    if alpha_s <= alpha_u {
        return Err(Error::InvalidArgument(format!(
            "reverse posterior needs alpha_s > alpha_u, got {alpha_s} <= {alpha_u}"
        )));
    }
    let width = z_u.len();
    if z0_hat.len() != width - 1 {
        return Err(Error::InvalidArgument(
            "z0_hat must cover the true categories only".into(),
        ));
    }
    let mask_slot = width - 1;
    let mut probs = vec![0.0; width];
    match crate::codec::one_hot_index(z_u) {
        Some(idx) if idx != mask_slot => {
            // Already unmasked: the state is carried backwards unchanged.
            probs[idx] = 1.0;
        }
        Some(_) => {
            let unmask = (alpha_s - alpha_u) / (1.0 - alpha_u);
            for (k, &p) in z0_hat.iter().enumerate() {
                probs[k] = unmask * p;
            }
            probs[mask_slot] = (1.0 - alpha_s) / (1.0 - alpha_u);
        }
        None => {
            return Err(Error::InvalidArgument(
                "z_u is not a valid one-hot state".into(),
            ))
        }
    }
    Ok(probs)
}

/// Deterministic x0-prediction update for the continuous block:
/// `z0_hat = z_u - sigma_u eps_hat`, then `z_s = z0_hat + sigma_s eps_hat`.
pub fn reverse_step_continuous(
    zu: &Array2<f64>,
    eps_hat: &Array2<f64>,
    sigma_u: f64,
    sigma_s: f64,
) -> Result<Array2<f64>> {
    if sigma_s >= sigma_u {
        return Err(Error::InvalidArgument(format!(
            "reverse step needs sigma_s < sigma_u, got {sigma_s} >= {sigma_u}"
        )));
    }
    Ok(zu - &((sigma_u - sigma_s) * eps_hat))
}
