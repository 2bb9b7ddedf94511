//! The trainable network: an MLP trunk over the concatenated noisy batch and
//! time embedding, a linear noise-prediction head for the continuous block,
//! one linear logit head per discrete channel, and a survival head that maps
//! the denoised feature vector to a scalar risk score.
//!
//! Forward passes cache every intermediate needed by [`backward`], which
//! computes exact reverse-mode gradients of any loss expressed through
//! gradients w.r.t. the three outputs (noise prediction, logits, risk).

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{silu, silu_backward, softmax_backward, softmax_rows, time_embedding, Dense};
use crate::schema::EncodingDims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Hidden widths of the trunk MLP.
    pub trunk_widths: Vec<usize>,
    /// Hidden width of the single-hidden-layer survival head.
    pub surv_hidden: usize,
    /// Dimension of the sinusoidal time embedding (even).
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            trunk_widths: vec![256, 256],
            surv_hidden: 64,
            time_dim: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_widths.is_empty() || self.trunk_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(
                "trunk widths must be non-empty and positive".into(),
            ));
        }
        if self.surv_hidden == 0 {
            return Err(Error::InvalidArgument("surv_hidden must be >= 1".into()));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::InvalidArgument("time_dim must be even and >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub trunk: Vec<Dense>,
    pub head_cont: Dense,
    pub head_disc: Vec<Dense>,
    /// Survival head: one hidden layer then a linear map to the scalar risk.
    pub surv_hidden: Dense,
    pub surv_out: Dense,
    pub cont_dim: usize,
    pub channel_sizes: Vec<usize>,
    pub time_dim: usize,
}

impl DenoiserParams {
    /// Deterministic fan-in-scaled uniform init, zero biases.
    pub fn init(dims: &EncodingDims, cfg: &DenoiserConfig, seed: u64) -> Result<DenoiserParams> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let input_dim = dims.cont_dim + dims.disc_total() + cfg.time_dim;
        let mut trunk = Vec::new();
        let mut fan_in = input_dim;
        for &w in &cfg.trunk_widths {
            trunk.push(Dense::init(fan_in, w, &mut rng));
            fan_in = w;
        }
        let head_cont = Dense::init(fan_in, dims.cont_dim, &mut rng);
        let head_disc = dims
            .channel_sizes
            .iter()
            .map(|&c| Dense::init(fan_in, c, &mut rng))
            .collect();
        let surv_in = dims.cont_dim + dims.disc_total();
        let surv_hidden = Dense::init(surv_in, cfg.surv_hidden, &mut rng);
        let surv_out = Dense::init(cfg.surv_hidden, 1, &mut rng);
        Ok(DenoiserParams {
            trunk,
            head_cont,
            head_disc,
            surv_hidden,
            surv_out,
            cont_dim: dims.cont_dim,
            channel_sizes: dims.channel_sizes.clone(),
            time_dim: cfg.time_dim,
        })
    }

    /// Zeroed copy with identical shapes (gradient / moment buffers).
    pub fn zeros_like(&self) -> DenoiserParams {
        let z = |d: &Dense| Dense::zeros(d.w.nrows(), d.w.ncols());
        DenoiserParams {
            trunk: self.trunk.iter().map(z).collect(),
            head_cont: z(&self.head_cont),
            head_disc: self.head_disc.iter().map(z).collect(),
            surv_hidden: z(&self.surv_hidden),
            surv_out: z(&self.surv_out),
            cont_dim: self.cont_dim,
            channel_sizes: self.channel_sizes.clone(),
            time_dim: self.time_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|d| d.param_count()).sum()
    }

    fn layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.trunk.iter().collect();
        v.push(&self.head_cont);
        v.extend(self.head_disc.iter());
        v.push(&self.surv_hidden);
        v.push(&self.surv_out);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.trunk.iter_mut().collect();
        v.push(&mut self.head_cont);
        v.extend(self.head_disc.iter_mut());
        v.push(&mut self.surv_hidden);
        v.push(&mut self.surv_out);
        v
    }

    /// Flatten all parameters in a fixed layer order (for finite-difference
    /// checks and optimizer state transport).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in self.layers() {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for layer in self.layers_mut() {
            for v in layer.w.iter_mut() {
                *v = *it.next().expect("flat vector too short");
            }
            for v in layer.b.iter_mut() {
                *v = *it.next().expect("flat vector too short");
            }
        }
        assert!(it.next().is_none(), "flat vector too long");
    }

    /// In-place `self += scale * other`, matching shapes.
    pub fn axpy(&mut self, scale: f64, other: &DenoiserParams) {
        for (dst, src) in self.layers_mut().into_iter().zip(other.layers()) {
            dst.w.scaled_add(scale, &src.w);
            dst.b.scaled_add(scale, &src.b);
        }
    }

    pub fn for_each_pair(&mut self, other: &DenoiserParams, mut f: impl FnMut(&mut f64, f64)) {
        for (dst, src) in self.layers_mut().into_iter().zip(other.layers()) {
            for (d, s) in dst.w.iter_mut().zip(src.w.iter()) {
                f(d, *s);
            }
            for (d, s) in dst.b.iter_mut().zip(src.b.iter()) {
                f(d, *s);
            }
        }
    }
}

/// Network outputs for one batch at one diffusion time.
#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    /// Predicted perturbation, `n x (d_cont + 1)`.
    pub eps_hat: Array2<f64>,
    /// Raw logits per discrete channel, `n x (C_j + 1)`.
    pub logits: Vec<Array2<f64>>,
    /// Row-wise softmax of the logits (mask slot included).
    pub x0_probs: Vec<Array2<f64>>,
    /// Scalar risk per row.
    pub risk: Array1<f64>,
}

/// Cached intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre_acts: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
    surv_input: Array2<f64>,
    surv_pre: Array2<f64>,
    surv_act: Array2<f64>,
    sigma_u: f64,
    n_rows: usize,
}

/// Gradients of a scalar loss w.r.t. the three network outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub d_eps_hat: Array2<f64>,
    pub d_logits: Vec<Array2<f64>>,
    pub d_risk: Array1<f64>,
}

impl OutputGrads {
    pub fn zeros(out: &DenoiserOutput) -> OutputGrads {
        OutputGrads {
            d_eps_hat: Array2::zeros(out.eps_hat.raw_dim()),
            d_logits: out.logits.iter().map(|l| Array2::zeros(l.raw_dim())).collect(),
            d_risk: Array1::zeros(out.risk.len()),
        }
    }
}

pub fn forward(
    params: &DenoiserParams,
    z_cont: &Array2<f64>,
    z_disc: &[Array2<f64>],
    u: f64,
    sched: &NoiseSchedule,
) -> Result<(DenoiserOutput, ForwardCache)> {
    let n = z_cont.nrows();
    if z_cont.ncols() != params.cont_dim {
        return Err(Error::InvalidArgument(format!(
            "continuous block has width {}, expected {}",
            z_cont.ncols(),
            params.cont_dim
        )));
    }
    if z_disc.len() != params.channel_sizes.len() {
        return Err(Error::InvalidArgument("wrong number of discrete channels".into()));
    }
    for (ch, &size) in z_disc.iter().zip(&params.channel_sizes) {
        if ch.nrows() != n || ch.ncols() != size {
            return Err(Error::InvalidArgument("discrete channel shape mismatch".into()));
        }
    }
    if z_cont.iter().any(|v| !v.is_finite())
        || z_disc.iter().any(|ch| ch.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidArgument("denoiser input contains NaN/inf".into()));
    }
    let sigma_u = sched.sigma_cont(u)?;

    let disc_total: usize = params.channel_sizes.iter().sum();
    let input_dim = params.cont_dim + disc_total + params.time_dim;
    let temb = time_embedding(u, params.time_dim);
    let mut input = Array2::zeros((n, input_dim));
    input
        .slice_mut(ndarray::s![.., ..params.cont_dim])
        .assign(z_cont);
    let mut offset = params.cont_dim;
    for ch in z_disc {
        input
            .slice_mut(ndarray::s![.., offset..offset + ch.ncols()])
            .assign(ch);
        offset += ch.ncols();
    }
    for mut row in input
        .slice_mut(ndarray::s![.., offset..])
        .rows_mut()
    {
        row.assign(&temb);
    }

    let mut pre_acts = Vec::with_capacity(params.trunk.len());
    let mut acts = Vec::with_capacity(params.trunk.len());
    let mut h = input.clone();
    for layer in &params.trunk {
        let pre = layer.forward(&h);
        h = silu(&pre);
        pre_acts.push(pre);
        acts.push(h.clone());
    }

    let eps_hat = params.head_cont.forward(&h);
    let mut logits = Vec::with_capacity(params.head_disc.len());
    let mut x0_probs = Vec::with_capacity(params.head_disc.len());
    for head in &params.head_disc {
        let l = head.forward(&h);
        x0_probs.push(softmax_rows(&l));
        logits.push(l);
    }

    // Denoised feature vector for the risk head: the x0 estimate of the
    // continuous block followed by the per-channel category probabilities.
    let z0_hat = z_cont - &(sigma_u * &eps_hat);
    let mut surv_input = Array2::zeros((n, params.cont_dim + disc_total));
    surv_input
        .slice_mut(ndarray::s![.., ..params.cont_dim])
        .assign(&z0_hat);
    let mut offset = params.cont_dim;
    for probs in &x0_probs {
        surv_input
            .slice_mut(ndarray::s![.., offset..offset + probs.ncols()])
            .assign(probs);
        offset += probs.ncols();
    }
    let surv_pre = params.surv_hidden.forward(&surv_input);
    let surv_act = silu(&surv_pre);
    let risk = params.surv_out.forward(&surv_act).index_axis_move(Axis(1), 0);

    let output = DenoiserOutput {
        eps_hat,
        logits,
        x0_probs,
        risk,
    };
    let cache = ForwardCache {
        input,
        pre_acts,
        acts,
        surv_input,
        surv_pre,
        surv_act,
        sigma_u,
        n_rows: n,
    };
    Ok((output, cache))
}

/// Exact reverse-mode gradients of the scalar loss described by `grads`
/// with respect to every parameter.
pub fn backward(
    params: &DenoiserParams,
    cache: &ForwardCache,
    output: &DenoiserOutput,
    grads: &OutputGrads,
) -> Result<DenoiserParams> {
    if grads.d_eps_hat.nrows() != cache.n_rows
        || grads.d_risk.len() != cache.n_rows
        || grads.d_logits.len() != output.logits.len()
    {
        return Err(Error::InvalidArgument(
            "output gradients do not match the cached forward pass".into(),
        ));
    }
    let mut g = params.zeros_like();

    // Survival head path.
    let d_risk_mat = grads
        .d_risk
        .view()
        .insert_axis(Axis(1))
        .to_owned();
    let d_surv_act = params
        .surv_out
        .backward(&cache.surv_act, &d_risk_mat, &mut g.surv_out);
    let d_surv_pre = silu_backward(&cache.surv_pre, &d_surv_act);
    let d_surv_input =
        params
            .surv_hidden
            .backward(&cache.surv_input, &d_surv_pre, &mut g.surv_hidden);

    // Split the survival-input gradient into its sources: the continuous x0
    // estimate (which feeds back into eps_hat with factor -sigma_u) and the
    // per-channel probabilities (which feed back through the softmax).
    let d_z0_hat = d_surv_input.slice(ndarray::s![.., ..params.cont_dim]);
    let mut d_eps_hat = grads.d_eps_hat.clone();
    d_eps_hat.scaled_add(-cache.sigma_u, &d_z0_hat);

    let mut d_logits_total = Vec::with_capacity(output.logits.len());
    let mut offset = params.cont_dim;
    for (c, probs) in output.x0_probs.iter().enumerate() {
        let d_probs = d_surv_input
            .slice(ndarray::s![.., offset..offset + probs.ncols()])
            .to_owned();
        let mut d_l = softmax_backward(probs, &d_probs);
        d_l += &grads.d_logits[c];
        d_logits_total.push(d_l);
        offset += probs.ncols();
    }

    // Heads into the trunk output.
    let top = cache.acts.last().unwrap_or(&cache.input);
    let mut d_top = params.head_cont.backward(top, &d_eps_hat, &mut g.head_cont);
    for (c, head) in params.head_disc.iter().enumerate() {
        d_top += &head.backward(top, &d_logits_total[c], &mut g.head_disc[c]);
    }

    // Trunk.
    let mut d_h = d_top;
    for i in (0..params.trunk.len()).rev() {
        let d_pre = silu_backward(&cache.pre_acts[i], &d_h);
        let below = if i == 0 { &cache.input } else { &cache.acts[i - 1] };
        d_h = params.trunk[i].backward(below, &d_pre, &mut g.trunk[i]);
    }
    Ok(g)
}
