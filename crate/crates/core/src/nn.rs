//! Small dense-network building blocks with hand-written backward passes.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected layer, `y = x W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// Fan-in scaled uniform init, zero biases.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Dense {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut w = Array2::zeros((fan_in, fan_out));
        for v in w.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Dense {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Dense {
        Dense {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Gradients for `y = x W + b` given upstream `dy`; returns `dx` and
    /// accumulates into `grad`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(ndarray::Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sigmoid-weighted linear unit `x * sigmoid(x)`, applied elementwise.
pub fn silu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v * sigmoid(v))
}

/// Derivative of silu evaluated at the pre-activation, times upstream `dy`.
pub fn silu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = pre.mapv(|v| {
        let s = sigmoid(v);
        s * (1.0 + v * (1.0 - s))
    });
    out *= dy;
    out
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of row-wise softmax: `dlogits = p  (dp - <dp, p>)` per row.
pub fn softmax_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((mut orow, prow), drow) in out
        .rows_mut()
        .into_iter()
        .zip(probs.rows())
        .zip(dprobs.rows())
    {
        let dot: f64 = prow.iter().zip(drow.iter()).map(|(p, d)| p * d).sum();
        for ((o, &p), &d) in orow.iter_mut().zip(prow.iter()).zip(drow.iter()) {
            *o = p * (d - dot);
        }
    }
    out
}

/// Sinusoidal features of the scalar diffusion time `u` at `dim / 2`
/// geometrically spaced frequencies between 1 and 1000 cycles.
pub fn time_embedding(u: f64, dim: usize) -> Array1<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "time embedding dim must be even");
    let half = dim / 2;
    let mut e = Array1::zeros(dim);
    for i in 0..half {
        let freq = 1000f64.powf(i as f64 / (half - 1).max(1) as f64);
        let phase = 2.0 * std::f64::consts::PI * freq * u;
        e[2 * i] = phase.sin();
        e[2 * i + 1] = phase.cos();
    }
    e
}
