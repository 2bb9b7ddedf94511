//! Sparsity-weighted Cox partial negative log-likelihood on predicted risk
//! scores.
//!
//! Events at or before the knee `tau` carry weight 1; later events decay as
//! `exp(-alpha (T - tau))`, damping the unstable gradients of small late
//! risk sets. With all weights 1 the loss is the classical Cox partial NLL
//! under the Breslow tie convention, risk sets formed within the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvLossConfig {
    /// Weight knee, in study time units.
    pub tau: f64,
    /// Decay rate applied past the knee, in inverse time units.
    pub alpha_decay: f64,
}

impl SurvLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.alpha_decay > 0.0) {
            return Err(Error::InvalidArgument(
                "survival loss needs tau > 0 and alpha_decay > 0".into(),
            ));
        }
        Ok(())
    }

    /// Data-driven defaults: `tau` at the 90th percentile of observed times,
    /// decay chosen so the weight at the latest observed time is `1/e`.
    pub fn from_times(times: &[f64]) -> Result<SurvLossConfig> {
        if times.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot derive survival-loss defaults from an empty cohort".into(),
            ));
        }
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let tau = percentile_linear(&sorted, 0.9);
        let max = *sorted.last().unwrap();
        let cfg = SurvLossConfig {
            tau,
            alpha_decay: 1.0 / (max - tau + 1e-8),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Linear-interpolation percentile of pre-sorted values.
fn percentile_linear(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `w = 1` for `T <= tau`, `exp(-alpha (T - tau))` beyond.
pub fn event_weights(times: &[f64], cfg: &SurvLossConfig) -> Vec<f64> {
    times
        .iter()
        .map(|&t| {
            if t <= cfg.tau {
                1.0
            } else {
                (-cfg.alpha_decay * (t - cfg.tau)).exp()
            }
        })
        .collect()
}

/// Risk scores with their observed times and event indicators.
#[derive(Debug, Clone)]
pub struct RiskBatch<'a> {
    pub risk: &'a [f64],
    pub time: &'a [f64],
    pub event: &'a [u8],
}

#[derive(Debug, Clone)]
pub struct CoxLoss {
    pub loss: f64,
    /// Exact gradient w.r.t. each risk score.
    pub grad_risk: Vec<f64>,
    pub n_events: usize,
}

impl CoxLoss {
    pub fn no_events(&self) -> bool {
        self.n_events == 0
    }
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Weighted Cox partial negative log-likelihood and its exact risk gradient.
///
/// `loss = -sum_{i: E_i = 1} w_i (r_i - logsumexp_{j: T_j >= T_i} r_j)`.
/// Tied event times share the same risk set (Breslow). Censored rows enter
/// denominators only. Zero events yields `(0, zero gradient)` with the
/// `no_events` flag set.
pub fn cox_weighted_nll(batch: &RiskBatch, weights: &[f64]) -> Result<CoxLoss> {
    let n = batch.risk.len();
    if batch.time.len() != n || batch.event.len() != n || weights.len() != n {
        return Err(Error::InvalidArgument(
            "risk, time, event, and weights must have equal lengths".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("cox loss needs n >= 1".into()));
    }
    if batch.risk.iter().any(|v| !v.is_finite())
        || batch.time.iter().any(|v| !v.is_finite())
    {
        return Err(Error::InvalidArgument("cox loss inputs must be finite".into()));
    }

    let n_events = batch.event.iter().filter(|&&e| e == 1).count();
    if n_events == 0 {
        return Ok(CoxLoss {
            loss: 0.0,
            grad_risk: vec![0.0; n],
            n_events: 0,
        });
    }

    // Process distinct times in descending order; the risk set of a time is
    // everything processed so far (T_j >= t).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| batch.time[b].total_cmp(&batch.time[a]));

    let mut loss = 0.0;
    let mut lse = f64::NEG_INFINITY; // logsumexp of risks over the current risk set
    let mut cum_ratio = 0.0; // sum over processed event times of W_t / S_t
    let mut grad = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let t = batch.time[order[i]];
        let mut j = i;
        while j < n && batch.time[order[j]] == t {
            lse = logaddexp(lse, batch.risk[order[j]]);
            j += 1;
        }
        // events in this tie group
        let mut group_weight = 0.0;
        for &k in &order[i..j] {
            if batch.event[k] == 1 {
                let w = weights[k];
                loss -= w * (batch.risk[k] - lse);
                grad[k] -= w;
                group_weight += w;
            }
        }
        if group_weight > 0.0 {
            cum_ratio += group_weight * (-lse).exp();
        }
        // everyone with T_k >= t belongs to every risk set processed so far
        for &k in &order[i..j] {
            grad[k] += batch.risk[k].exp() * cum_ratio;
        }
        // members processed earlier (larger T) also belong to this new risk set
        for &k in &order[..i] {
            if group_weight > 0.0 {
                grad[k] += batch.risk[k].exp() * group_weight * (-lse).exp();
            }
        }
        i = j;
    }
    Ok(CoxLoss {
        loss,
        grad_risk: grad,
        n_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn unit_weights(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn weights_boundary_and_decay() {
        let cfg = SurvLossConfig {
            tau: 5.0,
            alpha_decay: 0.5,
        };
        let w = event_weights(&[5.0, 7.0, 1.0], &cfg);
        assert_relative_eq!(w[0], 1.0);
        assert_relative_eq!(w[1], (-1.0f64).exp()); // tau + 1/alpha
        assert_relative_eq!(w[2], 1.0);
        // monotone nonincreasing in T
        let times: Vec<f64> = (1..100).map(|i| i as f64 * 0.2).collect();
        let ws = event_weights(&times, &cfg);
        assert!(ws.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn equal_risks_give_log_risk_set_size() {
        let batch = RiskBatch {
            risk: &[0.0, 0.0],
            time: &[1.0, 2.0],
            event: &[1, 1],
        };
        let out = cox_weighted_nll(&batch, &unit_weights(2)).unwrap();
        assert_relative_eq!(out.loss, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn singleton_risk_set_is_free() {
        let batch = RiskBatch {
            risk: &[3.0],
            time: &[1.0],
            event: &[1],
        };
        let out = cox_weighted_nll(&batch, &unit_weights(1)).unwrap();
        assert_relative_eq!(out.loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn three_subject_oracle() {
        let batch = RiskBatch {
            risk: &[1.0, 0.0, 0.0],
            time: &[1.0, 2.0, 3.0],
            event: &[1, 1, 0],
        };
        let out = cox_weighted_nll(&batch, &unit_weights(3)).unwrap();
        let expect = ((std::f64::consts::E + 2.0) / std::f64::consts::E).ln() + 2f64.ln();
        assert_relative_eq!(out.loss, expect, epsilon = 1e-12);
    }

    #[test]
    fn zero_events_flagged() {
        let batch = RiskBatch {
            risk: &[1.0, 2.0],
            time: &[1.0, 2.0],
            event: &[0, 0],
        };
        let out = cox_weighted_nll(&batch, &unit_weights(2)).unwrap();
        assert!(out.no_events());
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_risk.iter().all(|&g| g == 0.0));
    }

    /// Direct translation of the weighted partial likelihood with naive
    /// risk-set loops; the production path must agree.
    fn brute_force(risk: &[f64], time: &[f64], event: &[u8], w: &[f64]) -> f64 {
        let n = risk.len();
        let mut loss = 0.0;
        for i in 0..n {
            if event[i] != 1 {
                continue;
            }
            let denom: f64 = (0..n)
                .filter(|&j| time[j] >= time[i])
                .map(|j| risk[j].exp())
                .sum();
            loss -= w[i] * (risk[i] - denom.ln());
        }
        loss
    }

    #[test]
    fn matches_brute_force_with_ties_and_weights() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for case in 0..50 {
            let n = rng.random_range(1..=20);
            let risk: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            // coarse grid forces ties
            let time: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(1..=6) as f64) * 0.5)
                .collect();
            let event: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.7))).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let batch = RiskBatch {
                risk: &risk,
                time: &time,
                event: &event,
            };
            let out = cox_weighted_nll(&batch, &w).unwrap();
            let expect = brute_force(&risk, &time, &event, &w);
            assert_relative_eq!(out.loss, expect, epsilon = 1e-10, max_relative = 1e-10);
            let _ = case;
        }
    }

    #[test]
    fn shift_invariance() {
        let risk = [0.3, -1.0, 2.0, 0.7, 0.0];
        let shifted: Vec<f64> = risk.iter().map(|r| r + 13.7).collect();
        let time = [1.0, 4.0, 2.0, 2.0, 5.0];
        let event = [1, 0, 1, 1, 0];
        let w = [1.0, 1.0, 0.5, 0.9, 1.0];
        let a = cox_weighted_nll(
            &RiskBatch {
                risk: &risk,
                time: &time,
                event: &event,
            },
            &w,
        )
        .unwrap();
        let b = cox_weighted_nll(
            &RiskBatch {
                risk: &shifted,
                time: &time,
                event: &event,
            },
            &w,
        )
        .unwrap();
        assert_relative_eq!(a.loss, b.loss, epsilon = 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..10 {
            let n = rng.random_range(2..=12);
            let mut risk: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let time: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(1..=5) as f64) * 0.7)
                .collect();
            let event: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.6))).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
            let grad = cox_weighted_nll(
                &RiskBatch {
                    risk: &risk,
                    time: &time,
                    event: &event,
                },
                &w,
            )
            .unwrap()
            .grad_risk;
            let h = 1e-6;
            for k in 0..n {
                let orig = risk[k];
                risk[k] = orig + h;
                let up = brute_force(&risk, &time, &event, &w);
                risk[k] = orig - h;
                let dn = brute_force(&risk, &time, &event, &w);
                risk[k] = orig;
                let fd = (up - dn) / (2.0 * h);
                let denom = fd.abs().max(1e-8);
                assert!(
                    ((grad[k] - fd) / denom).abs() < 1e-6,
                    "grad {} vs fd {}",
                    grad[k],
                    fd
                );
            }
        }
    }

    #[test]
    fn data_driven_defaults() {
        let times: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let cfg = SurvLossConfig::from_times(&times).unwrap();
        assert_relative_eq!(cfg.tau, 90.1, epsilon = 1e-9);
        // weight at the latest time is 1/e
        let w = event_weights(&[100.0], &cfg);
        assert_relative_eq!(w[0], (-1.0f64).exp(), epsilon = 1e-6);
    }
}
