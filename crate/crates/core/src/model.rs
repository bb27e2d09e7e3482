//! The joint network: a shared per-cell encoder feeding a gaze head (one
//! attention logit per cell), a feature head (C channels per cell), attention
//! pooling of the feature grid, and a softmax linear classifier.
//!
//! Training uses a Gumbel-Softmax draw from the predicted gaze distribution
//! as the attention map; inference feeds the distribution itself (the mean
//! of the relaxed draw) through the classifier, avoiding sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    gumbel_noise, gumbel_softmax_with_noise, normalize, GridDist, GridShape, LogitGrid,
};
use crate::prior::GazeRecord;

/// Layer widths. `d` input descriptor channels, `h` hidden units, `c`
/// pooled feature channels, `k` action classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub d: usize,
    pub h: usize,
    pub c: usize,
    pub k: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d: 8,
            h: 64,
            c: 32,
            k: 10,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h == 0 || self.c == 0 || self.k == 0 {
            return Err(Error::InvalidParameter(
                "all model dimensions must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Dense affine map, weights stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Symmetric uniform fan-in init for weights, zero bias.
    pub fn fan_in_init<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Affine {
            out_dim,
            in_dim,
            weights: (0..out_dim * in_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    /// `y = W x + b`, writing into `out`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
            *o = self.bias[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// All trainable parameters: per-cell encoder (D -> H, rectified), gaze head
/// (H -> 1), feature head (H -> C), and the linear classifier (C -> K).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: Affine,
    pub gaze_head: Affine,
    pub feature_head: Affine,
    pub classifier: Affine,
}

/// Names of the parameter tensors in canonical order. Checkpoints, gradient
/// containers and the optimizer state all follow this ordering.
pub const TENSOR_NAMES: [&str; 8] = [
    "encoder.weights",
    "encoder.bias",
    "gaze_head.weights",
    "gaze_head.bias",
    "feature_head.weights",
    "feature_head.bias",
    "classifier.weights",
    "classifier.bias",
];

impl ModelParams {
    /// Fresh parameters: fan-in init for encoder, feature head and
    /// classifier; the gaze head starts at zero so the initial attention
    /// distribution is uniform.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(ModelParams {
            dims,
            encoder: Affine::fan_in_init(dims.h, dims.d, &mut rng),
            gaze_head: Affine::zeros(1, dims.h),
            feature_head: Affine::fan_in_init(dims.c, dims.h, &mut rng),
            classifier: Affine::fan_in_init(dims.k, dims.c, &mut rng),
        })
    }

    pub fn tensors(&self) -> [&Vec<f64>; 8] {
        [
            &self.encoder.weights,
            &self.encoder.bias,
            &self.gaze_head.weights,
            &self.gaze_head.bias,
            &self.feature_head.weights,
            &self.feature_head.bias,
            &self.classifier.weights,
            &self.classifier.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.encoder.weights,
            &mut self.encoder.bias,
            &mut self.gaze_head.weights,
            &mut self.gaze_head.bias,
            &mut self.feature_head.weights,
            &mut self.feature_head.bias,
            &mut self.classifier.weights,
            &mut self.classifier.bias,
        ]
    }
}

/// One clip window: a raw `cells x D` descriptor grid, its gaze records and
/// the action label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub shape: GridShape,
    /// `cells * d` values, cell-major.
    pub features: Vec<f64>,
    pub gaze: Vec<GazeRecord>,
    pub label: usize,
}

impl ClipSample {
    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        if self.features.len() != self.shape.cells() * dims.d {
            return Err(Error::ShapeMismatch(format!(
                "features length {} != cells {} * d {}",
                self.features.len(),
                self.shape.cells(),
                dims.d
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature".into()));
        }
        if self.label >= dims.k {
            return Err(Error::Validation(format!(
                "label {} out of range for k = {}",
                self.label, dims.k
            )));
        }
        Ok(())
    }
}

/// How the attention map fed to pooling was produced. The backward pass
/// dispatches on this to route gradients to the gaze head (or not).
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionMode {
    /// Gumbel-Softmax draw; noise recorded for exact replay.
    Sampled { noise: Vec<f64>, tau: f64 },
    /// Attention is the predicted distribution itself (inference shortcut,
    /// and the deterministic gaze-MLE baseline).
    Mean,
    /// Externally fixed map (uniform, center prior, ground-truth gaze);
    /// classification gradients do not reach the gaze head.
    Fixed,
}

/// Intermediates retained by the forward pass for exact backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `cells * h`, post-rectifier.
    pub hidden: Vec<f64>,
    /// `cells * c`.
    pub feature_grid: Vec<f64>,
    pub attention_mode: AttentionMode,
    /// Per-channel inverted-dropout scale (0 or `1/(1-rate)`); `None` when
    /// dropout is off.
    pub dropout_scale: Option<Vec<f64>>,
    /// Pooled vector after dropout, as seen by the classifier.
    pub pooled_dropped: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub gaze_logits: LogitGrid,
    pub gaze_dist: GridDist,
    pub attention: GridDist,
    pub pooled: Vec<f64>,
    pub class_probs: Vec<f64>,
    pub trace: Option<ForwardTrace>,
}

/// Per-cell rectified affine encoding: `h = max(0, W1 d + b1)`.
pub fn encode(sample: &ClipSample, params: &ModelParams) -> Result<Vec<f64>> {
    sample.validate(&params.dims)?;
    let dims = &params.dims;
    let cells = sample.shape.cells();
    let mut hidden = vec![0.0; cells * dims.h];
    for cell in 0..cells {
        let x = &sample.features[cell * dims.d..(cell + 1) * dims.d];
        let out = &mut hidden[cell * dims.h..(cell + 1) * dims.h];
        params.encoder.apply(x, out);
        for v in out.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    Ok(hidden)
}

/// Gaze head: one scalar logit per cell, normalized into the predicted
/// gaze distribution `q`.
pub fn gaze_forward(
    hidden: &[f64],
    shape: GridShape,
    params: &ModelParams,
) -> Result<(LogitGrid, GridDist)> {
    let h = params.dims.h;
    let mut values = vec![0.0; shape.cells()];
    let mut out = [0.0f64];
    for cell in 0..shape.cells() {
        params.gaze_head.apply(&hidden[cell * h..(cell + 1) * h], &mut out);
        values[cell] = out[0];
    }
    let logits = LogitGrid::new(shape, values)?;
    let dist = normalize(&logits)?;
    Ok((logits, dist))
}

fn feature_forward(hidden: &[f64], cells: usize, params: &ModelParams) -> Vec<f64> {
    let (h, c) = (params.dims.h, params.dims.c);
    let mut feats = vec![0.0; cells * c];
    for cell in 0..cells {
        params.feature_head.apply(
            &hidden[cell * h..(cell + 1) * h],
            &mut feats[cell * c..(cell + 1) * c],
        );
    }
    feats
}

/// Attention-weighted average pooling over all cells:
/// `pooled_c = sum_cell attn[cell] * feat[cell][c]`.
pub fn attention_pool(feature_grid: &[f64], channels: usize, attn: &GridDist) -> Result<Vec<f64>> {
    if feature_grid.len() != attn.shape.cells() * channels {
        return Err(Error::ShapeMismatch(format!(
            "feature grid length {} != cells {} * channels {}",
            feature_grid.len(),
            attn.shape.cells(),
            channels
        )));
    }
    let mut pooled = vec![0.0; channels];
    for (cell, &w) in attn.probs.iter().enumerate() {
        let feat = &feature_grid[cell * channels..(cell + 1) * channels];
        for (p, f) in pooled.iter_mut().zip(feat) {
            *p += w * f;
        }
    }
    Ok(pooled)
}

/// Softmax linear classifier over the pooled vector.
pub fn classify(pooled: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite pooled vector".into()));
    }
    let mut logits = vec![0.0; params.dims.k];
    params.classifier.apply(pooled, &mut logits);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(probs)
}

fn forward_core(
    sample: &ClipSample,
    params: &ModelParams,
    attention: GridDist,
    attention_mode: AttentionMode,
    gaze_logits: LogitGrid,
    gaze_dist: GridDist,
    hidden: Vec<f64>,
    dropout_scale: Option<Vec<f64>>,
) -> Result<ModelOutput> {
    let dims = &params.dims;
    let cells = sample.shape.cells();
    let feature_grid = feature_forward(&hidden, cells, params);
    let pooled = attention_pool(&feature_grid, dims.c, &attention)?;
    let pooled_dropped: Vec<f64> = match &dropout_scale {
        Some(scale) => pooled.iter().zip(scale).map(|(p, s)| p * s).collect(),
        None => pooled.clone(),
    };
    let class_probs = classify(&pooled_dropped, params)?;
    Ok(ModelOutput {
        gaze_logits,
        gaze_dist,
        attention,
        pooled,
        class_probs,
        trace: Some(ForwardTrace {
            hidden,
            feature_grid,
            attention_mode,
            dropout_scale,
            pooled_dropped,
        }),
    })
}

/// Stochastic training forward: attention is a Gumbel-Softmax draw from the
/// gaze head's distribution; the pooled vector passes through inverted
/// dropout before the classifier. All intermediates are retained.
pub fn forward_train<R: Rng + ?Sized>(
    sample: &ClipSample,
    params: &ModelParams,
    tau: f64,
    rng: &mut R,
    dropout_rate: f64,
    dropout_on: bool,
) -> Result<ModelOutput> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::InvalidParameter(format!(
            "dropout rate must be in [0, 1), got {dropout_rate}"
        )));
    }
    let noise = gumbel_noise(sample.shape, rng);
    let dropout_scale = if dropout_on && dropout_rate > 0.0 {
        let keep = 1.0 - dropout_rate;
        Some(
            (0..params.dims.c)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
        )
    } else {
        None
    };
    forward_with_noise(sample, params, tau, noise, dropout_scale)
}

/// Deterministic training forward given recorded Gumbel noise and dropout
/// scales. The finite-difference checker replays draws through this.
pub fn forward_with_noise(
    sample: &ClipSample,
    params: &ModelParams,
    tau: f64,
    noise: Vec<f64>,
    dropout_scale: Option<Vec<f64>>,
) -> Result<ModelOutput> {
    let hidden = encode(sample, params)?;
    let (gaze_logits, gaze_dist) = gaze_forward(&hidden, sample.shape, params)?;
    let attention = gumbel_softmax_with_noise(&gaze_logits, tau, &noise)?;
    forward_core(
        sample,
        params,
        attention,
        AttentionMode::Sampled { noise, tau },
        gaze_logits,
        gaze_dist,
        hidden,
        dropout_scale,
    )
}

/// Inference forward: no sampling, no dropout; attention is the predicted
/// distribution `q` itself.
pub fn forward_infer(sample: &ClipSample, params: &ModelParams) -> Result<ModelOutput> {
    let hidden = encode(sample, params)?;
    let (gaze_logits, gaze_dist) = gaze_forward(&hidden, sample.shape, params)?;
    let attention = gaze_dist.clone();
    forward_core(
        sample,
        params,
        attention,
        AttentionMode::Mean,
        gaze_logits,
        gaze_dist,
        hidden,
        None,
    )
}

/// Deterministic forward where the attention map is `q` and gradients flow
/// through it (the gaze-MLE baseline's training path).
pub fn forward_mean_attention(
    sample: &ClipSample,
    params: &ModelParams,
    dropout_scale: Option<Vec<f64>>,
) -> Result<ModelOutput> {
    let hidden = encode(sample, params)?;
    let (gaze_logits, gaze_dist) = gaze_forward(&hidden, sample.shape, params)?;
    let attention = gaze_dist.clone();
    forward_core(
        sample,
        params,
        attention,
        AttentionMode::Mean,
        gaze_logits,
        gaze_dist,
        hidden,
        dropout_scale,
    )
}

/// Forward with an externally fixed attention map (uniform pooling, center
/// prior, ground-truth gaze pooling). Classification gradients stop at the
/// pooling weights.
pub fn forward_fixed_attention(
    sample: &ClipSample,
    params: &ModelParams,
    attention: &GridDist,
    dropout_scale: Option<Vec<f64>>,
) -> Result<ModelOutput> {
    if attention.shape != sample.shape {
        return Err(Error::ShapeMismatch("attention map vs sample grid".into()));
    }
    let hidden = encode(sample, params)?;
    let (gaze_logits, gaze_dist) = gaze_forward(&hidden, sample.shape, params)?;
    forward_core(
        sample,
        params,
        attention.clone(),
        AttentionMode::Fixed,
        gaze_logits,
        gaze_dist,
        hidden,
        dropout_scale,
    )
}
