//! Variational loss, exact analytic gradients through the reparameterized
//! sampler, SGD with momentum and weight decay, the training loop, and a
//! finite-difference gradient verifier.
//!
//! Gradients are derived by hand. The attention path dispatches on how the
//! map was produced: through the Gumbel-Softmax draw (noise held constant,
//! reparameterization), through the mean distribution `q` (gaze-MLE
//! baseline and inference), or not at all (fixed attention maps).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{kl_divergence, GridDist, GridShape, EPS_FLOOR};
use crate::model::{
    forward_fixed_attention, forward_mean_attention, forward_train, forward_with_noise,
    AttentionMode, ClipSample, ModelDims, ModelOutput, ModelParams, TENSOR_NAMES,
};
use crate::prior::{aggregate_fixations, build_prior, PriorConfig};

/// The two-term training loss of the negative evidence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
}

/// `nll = -log p(y)` plus the weighted KL between the predicted gaze
/// distribution and the prior.
pub fn loss(
    output: &ModelOutput,
    label: usize,
    prior: &GridDist,
    kl_weight: f64,
) -> Result<LossBreakdown> {
    if label >= output.class_probs.len() {
        return Err(Error::Validation(format!(
            "label {label} out of range for {} classes",
            output.class_probs.len()
        )));
    }
    let nll = -output.class_probs[label].max(f64::MIN_POSITIVE).ln();
    let kl = kl_divergence(&output.gaze_dist, prior)?;
    Ok(LossBreakdown {
        nll,
        kl,
        total: nll + kl_weight * kl,
    })
}

/// Gradient of the total loss with respect to every parameter tensor, in
/// [`TENSOR_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: [Vec<f64>; 8],
}

impl Grads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let t = params.tensors();
        Grads {
            tensors: std::array::from_fn(|i| vec![0.0; t[i].len()]),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// Extra loss terms attached to the classification NLL during backward.
#[derive(Debug, Clone, Default)]
pub struct Objective<'a> {
    /// KL[q || prior] with the given weight; the prior must be floored.
    pub kl_prior: Option<(&'a GridDist, f64)>,
    /// Per-cell sigmoid cross entropy against 0/1 fixation targets,
    /// averaged over cells, with the given weight (gaze-MLE baseline).
    pub gaze_bce: Option<(&'a [f64], f64)>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Total objective value for a finished forward pass. Shares the exact term
/// definitions with [`backward`]; the finite-difference checker differences
/// this function.
pub fn objective_value(output: &ModelOutput, label: usize, obj: &Objective) -> Result<f64> {
    let mut total = -output.class_probs[label].max(f64::MIN_POSITIVE).ln();
    if let Some((prior, w)) = obj.kl_prior {
        total += w * kl_divergence(&output.gaze_dist, prior)?;
    }
    if let Some((targets, w)) = obj.gaze_bce {
        let cells = output.gaze_logits.values.len();
        if targets.len() != cells {
            return Err(Error::ShapeMismatch("bce targets vs grid".into()));
        }
        let bce: f64 = output
            .gaze_logits
            .values
            .iter()
            .zip(targets)
            .map(|(&l, &t)| {
                let s = sigmoid(l).clamp(1e-12, 1.0 - 1e-12);
                -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
            })
            .sum();
        total += w * bce / cells as f64;
    }
    Ok(total)
}

/// Exact analytic gradients of the total objective with respect to every
/// parameter tensor, treating the recorded Gumbel noise as a constant.
pub fn backward(
    sample: &ClipSample,
    params: &ModelParams,
    output: &ModelOutput,
    obj: &Objective,
) -> Result<Grads> {
    let trace = output.trace.as_ref().ok_or_else(|| {
        Error::ContractViolation("backward requires a forward pass with retained intermediates".into())
    })?;
    let dims = &params.dims;
    let cells = sample.shape.cells();
    let label = sample.label;
    let mut grads = Grads::zeros_like(params);

    // Classifier: d/dlogit_k = p_k - [k == y].
    let mut dclass: Vec<f64> = output.class_probs.clone();
    dclass[label] -= 1.0;
    for k in 0..dims.k {
        for c in 0..dims.c {
            grads.tensors[6][k * dims.c + c] = dclass[k] * trace.pooled_dropped[c];
        }
        grads.tensors[7][k] = dclass[k];
    }

    // Into the pooled vector, undoing dropout scaling.
    let mut dpooled = vec![0.0; dims.c];
    for c in 0..dims.c {
        let mut g = 0.0;
        for k in 0..dims.k {
            g += dclass[k] * params.classifier.weights[k * dims.c + c];
        }
        if let Some(scale) = &trace.dropout_scale {
            g *= scale[c];
        }
        dpooled[c] = g;
    }

    // Attention and per-cell feature gradients.
    let mut dattn = vec![0.0; cells];
    let mut dfeat = vec![0.0; cells * dims.c];
    for cell in 0..cells {
        let feat = &trace.feature_grid[cell * dims.c..(cell + 1) * dims.c];
        let w = output.attention.probs[cell];
        let mut acc = 0.0;
        for c in 0..dims.c {
            acc += dpooled[c] * feat[c];
            dfeat[cell * dims.c + c] = w * dpooled[c];
        }
        dattn[cell] = acc;
    }

    // Gaze-logit gradient from the classification path.
    let mut dlogits = vec![0.0; cells];
    match &trace.attention_mode {
        AttentionMode::Sampled { tau, .. } => {
            // attn = softmax((logits + G) / tau); softmax Jacobian then 1/tau.
            let inner: f64 = output
                .attention
                .probs
                .iter()
                .zip(&dattn)
                .map(|(a, d)| a * d)
                .sum();
            for cell in 0..cells {
                dlogits[cell] =
                    output.attention.probs[cell] * (dattn[cell] - inner) / tau;
            }
        }
        AttentionMode::Mean => {
            let q = &output.gaze_dist.probs;
            let inner: f64 = q.iter().zip(&dattn).map(|(a, d)| a * d).sum();
            for cell in 0..cells {
                dlogits[cell] = q[cell] * (dattn[cell] - inner);
            }
        }
        AttentionMode::Fixed => {}
    }

    // KL[q || p] path: d/dlogit_j = q_j ((log q_j - log p_j) - KL).
    if let Some((prior, w)) = obj.kl_prior {
        if prior.shape != sample.shape {
            return Err(Error::ShapeMismatch("prior vs sample grid".into()));
        }
        let p = prior.floored(EPS_FLOOR);
        let q = &output.gaze_dist.probs;
        let kl: f64 = q
            .iter()
            .zip(&p.probs)
            .map(|(&qi, &pi)| if qi > 0.0 { qi * (qi.ln() - pi.ln()) } else { 0.0 })
            .sum();
        for cell in 0..cells {
            let qi = q[cell];
            if qi > 0.0 {
                dlogits[cell] += w * qi * ((qi.ln() - p.probs[cell].ln()) - kl);
            }
        }
    }

    // Per-cell sigmoid cross entropy: d/dlogit = (sigma - target) / cells.
    if let Some((targets, w)) = obj.gaze_bce {
        for cell in 0..cells {
            dlogits[cell] +=
                w * (sigmoid(output.gaze_logits.values[cell]) - targets[cell]) / cells as f64;
        }
    }

    // Gaze head (H -> 1) and backprop into the hidden grid.
    let mut dhidden = vec![0.0; cells * dims.h];
    for cell in 0..cells {
        let h = &trace.hidden[cell * dims.h..(cell + 1) * dims.h];
        let dl = dlogits[cell];
        for j in 0..dims.h {
            grads.tensors[2][j] += dl * h[j];
            dhidden[cell * dims.h + j] += dl * params.gaze_head.weights[j];
        }
        grads.tensors[3][0] += dl;
    }

    // Feature head (H -> C).
    for cell in 0..cells {
        let h = &trace.hidden[cell * dims.h..(cell + 1) * dims.h];
        for c in 0..dims.c {
            let df = dfeat[cell * dims.c + c];
            if df == 0.0 {
                continue;
            }
            for j in 0..dims.h {
                grads.tensors[4][c * dims.h + j] += df * h[j];
                dhidden[cell * dims.h + j] += df * params.feature_head.weights[c * dims.h + j];
            }
            grads.tensors[5][c] += df;
        }
    }

    // Encoder (D -> H) through the rectifier.
    for cell in 0..cells {
        let x = &sample.features[cell * dims.d..(cell + 1) * dims.d];
        for j in 0..dims.h {
            if trace.hidden[cell * dims.h + j] <= 0.0 {
                continue;
            }
            let dpre = dhidden[cell * dims.h + j];
            for i in 0..dims.d {
                grads.tensors[0][j * dims.d + i] += dpre * x[i];
            }
            grads.tensors[1][j] += dpre;
        }
    }

    Ok(grads)
}

/// Momentum buffers plus schedule bookkeeping.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub momentum_buffers: [Vec<f64>; 8],
    pub epoch: usize,
    pub lr: f64,
}

impl OptimState {
    pub fn new(params: &ModelParams, lr0: f64) -> Self {
        let t = params.tensors();
        OptimState {
            momentum_buffers: std::array::from_fn(|i| vec![0.0; t[i].len()]),
            epoch: 0,
            lr: lr0,
        }
    }
}

/// Training hyperparameters. Defaults follow the reference training recipe:
/// SGD momentum 0.9, weight decay 4e-5, initial learning rate 0.032 decayed
/// by 10x at epoch 40, 80 epochs, temperature 2, dropout 0.7.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_epoch: usize,
    pub total_epochs: usize,
    pub tau: f64,
    pub kl_weight: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.032,
            momentum: 0.9,
            weight_decay: 4e-5,
            decay_epoch: 40,
            total_epochs: 80,
            tau: 2.0,
            kl_weight: 1.0,
            dropout: 0.7,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidParameter("lr0 and tau must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) && self.momentum != 0.0 {
            return Err(Error::InvalidParameter("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.kl_weight < 0.0 {
            return Err(Error::InvalidParameter(
                "weight_decay and kl_weight must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter("dropout must be in [0, 1)".into()));
        }
        if self.decay_epoch > self.total_epochs {
            return Err(Error::InvalidParameter(
                "decay_epoch must be <= total_epochs".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One SGD step: `buf <- momentum * buf + (grad + wd * param)`,
/// `param <- param - lr * buf`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Grads,
    state: &mut OptimState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let tensors = params.tensors_mut();
    for (i, t) in tensors.into_iter().enumerate() {
        let buf = &mut state.momentum_buffers[i];
        for ((p, &g), b) in t.iter_mut().zip(&grads.tensors[i]).zip(buf.iter_mut()) {
            *b = momentum * *b + g + weight_decay * *p;
            *p -= lr * *b;
        }
    }
    state.lr = lr;
}

/// Step schedule: `lr0` before `decay_epoch`, `lr0 / 10` after.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.decay_epoch {
        cfg.lr0
    } else {
        cfg.lr0 / 10.0
    }
}

/// What supervises the gaze head during training.
#[derive(Debug, Clone)]
pub enum TrainMode {
    /// Full stochastic model with KL against per-sample gaze priors.
    StochasticGaze(PriorConfig),
    /// Full stochastic model with the weak uniform prior.
    StochasticUniform,
    /// Deterministic gaze-MLE baseline: mean attention plus per-cell
    /// sigmoid cross entropy on the fixation-cell indicator.
    GazeMle { bce_weight: f64, window_frames: usize },
    /// Fixed attention maps; the gaze head receives no gradient.
    FixedAttention(FixedAttention),
}

/// Source of fixed attention maps for baselines.
#[derive(Debug, Clone)]
pub enum FixedAttention {
    Uniform,
    /// One map shared by every sample (the center prior).
    Shared(GridDist),
    /// Per-sample gaze prior built from the sample's own records.
    PerSampleGaze(PriorConfig),
}

/// Per-epoch training record, emitted as line-delimited JSON by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
    pub accuracy: f64,
}

/// splitmix64 mixing for derived per-sample random streams.
pub(crate) fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(b.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

struct SampleContext {
    prior: Option<GridDist>,
    fixed_attention: Option<GridDist>,
    bce_targets: Option<Vec<f64>>,
}

fn build_contexts(dataset: &[ClipSample], mode: &TrainMode) -> Result<Vec<SampleContext>> {
    dataset
        .iter()
        .map(|sample| {
            Ok(match mode {
                TrainMode::StochasticGaze(cfg) => SampleContext {
                    prior: Some(build_prior(&sample.gaze, cfg, sample.shape)?),
                    fixed_attention: None,
                    bce_targets: None,
                },
                TrainMode::StochasticUniform => SampleContext {
                    prior: Some(GridDist::uniform(sample.shape)),
                    fixed_attention: None,
                    bce_targets: None,
                },
                TrainMode::GazeMle { window_frames, .. } => {
                    let hits = aggregate_fixations(&sample.gaze, *window_frames, sample.shape);
                    let mut targets = vec![0.0; sample.shape.cells()];
                    for (t, r, c) in hits {
                        targets[sample.shape.index(t, r, c)] = 1.0;
                    }
                    SampleContext {
                        prior: None,
                        fixed_attention: None,
                        bce_targets: Some(targets),
                    }
                }
                TrainMode::FixedAttention(fixed) => {
                    let map = match fixed {
                        FixedAttention::Uniform => GridDist::uniform(sample.shape),
                        FixedAttention::Shared(map) => map.clone(),
                        FixedAttention::PerSampleGaze(cfg) => {
                            build_prior(&sample.gaze, cfg, sample.shape)?
                        }
                    };
                    SampleContext {
                        prior: None,
                        fixed_attention: Some(map),
                        bce_targets: None,
                    }
                }
            })
        })
        .collect()
}

struct SampleResult {
    grads: Grads,
    loss: LossBreakdown,
    correct: bool,
}

fn train_one_sample(
    sample: &ClipSample,
    ctx: &SampleContext,
    params: &ModelParams,
    cfg: &TrainConfig,
    mode: &TrainMode,
    rng_seed: u64,
) -> Result<SampleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let dropout_on = cfg.dropout > 0.0;
    let dropout_scale = |rng: &mut ChaCha8Rng, c: usize| -> Option<Vec<f64>> {
        if dropout_on {
            let keep = 1.0 - cfg.dropout;
            Some(
                (0..c)
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect(),
            )
        } else {
            None
        }
    };

    let (output, obj_kl, obj_bce): (ModelOutput, Option<(&GridDist, f64)>, Option<(&[f64], f64)>) =
        match mode {
            TrainMode::StochasticGaze(_) | TrainMode::StochasticUniform => {
                let output =
                    forward_train(sample, params, cfg.tau, &mut rng, cfg.dropout, dropout_on)?;
                (output, Some((ctx.prior.as_ref().unwrap(), cfg.kl_weight)), None)
            }
            TrainMode::GazeMle { bce_weight, .. } => {
                let scale = dropout_scale(&mut rng, params.dims.c);
                let output = forward_mean_attention(sample, params, scale)?;
                (
                    output,
                    None,
                    Some((ctx.bce_targets.as_ref().unwrap().as_slice(), *bce_weight)),
                )
            }
            TrainMode::FixedAttention(_) => {
                let scale = dropout_scale(&mut rng, params.dims.c);
                let output = forward_fixed_attention(
                    sample,
                    params,
                    ctx.fixed_attention.as_ref().unwrap(),
                    scale,
                )?;
                (output, None, None)
            }
        };

    let obj = Objective {
        kl_prior: obj_kl,
        gaze_bce: obj_bce,
    };
    let grads = backward(sample, params, &output, &obj)?;
    let nll = -output.class_probs[sample.label].max(f64::MIN_POSITIVE).ln();
    let kl = match obj.kl_prior {
        Some((prior, _)) => kl_divergence(&output.gaze_dist, prior)?,
        None => 0.0,
    };
    let total = objective_value(&output, sample.label, &obj)?;
    let predicted = output
        .class_probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    Ok(SampleResult {
        grads,
        loss: LossBreakdown { nll, kl, total },
        correct: predicted == sample.label,
    })
}

/// Mini-batch SGD over the dataset. Deterministic given `cfg.seed`: the
/// shuffle order and every per-sample noise stream derive from it, and batch
/// gradients are reduced in fixed index order regardless of parallelism.
pub fn train(
    dataset: &[ClipSample],
    dims: ModelDims,
    cfg: &TrainConfig,
    mode: &TrainMode,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("empty training dataset".into()));
    }
    let mut params = ModelParams::init(dims, cfg.seed)?;
    for sample in dataset {
        sample.validate(&dims)?;
    }
    let contexts = build_contexts(dataset, mode)?;
    let mut state = OptimState::new(&params, cfg.lr0);
    let mut log = Vec::with_capacity(cfg.total_epochs);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.total_epochs {
        let lr = lr_at_epoch(epoch, cfg);
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 0xC0FFEE));
        shuffle(&mut order, &mut shuffle_rng);

        let mut sums = LossBreakdown {
            nll: 0.0,
            kl: 0.0,
            total: 0.0,
        };
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let params_ref = &params;
            let results: Vec<Result<SampleResult>> = crate::parallel::map_slice(batch, |&idx| {
                train_one_sample(
                    &dataset[idx],
                    &contexts[idx],
                    params_ref,
                    cfg,
                    mode,
                    derive_seed(cfg.seed, epoch as u64 + 1, idx as u64),
                )
            });
            let mut batch_grads = Grads::zeros_like(&params);
            for res in results {
                let res = res?;
                batch_grads.add_assign(&res.grads);
                sums.nll += res.loss.nll;
                sums.kl += res.loss.kl;
                sums.total += res.loss.total;
                correct += res.correct as usize;
            }
            batch_grads.scale(1.0 / batch.len() as f64);
            sgd_step(
                &mut params,
                &batch_grads,
                &mut state,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
        }
        state.epoch = epoch + 1;
        let n = dataset.len() as f64;
        let entry = EpochLog {
            epoch,
            lr,
            nll: sums.nll / n,
            kl: sums.kl / n,
            total: sums.total / n,
            accuracy: correct as f64 / n,
        };
        if !entry.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at epoch {epoch}"
            )));
        }
        log.push(entry);
    }
    Ok((params, log))
}

fn shuffle<R: Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// How to rebuild the forward pass for finite differencing.
#[derive(Debug, Clone)]
pub enum ReplayMode {
    Sampled { noise: Vec<f64>, tau: f64 },
    Mean,
    Fixed(GridDist),
}

impl ReplayMode {
    /// Extracts the replay recipe from a finished forward pass.
    pub fn from_output(output: &ModelOutput) -> Result<ReplayMode> {
        let trace = output.trace.as_ref().ok_or_else(|| {
            Error::ContractViolation("forward pass did not retain intermediates".into())
        })?;
        Ok(match &trace.attention_mode {
            AttentionMode::Sampled { noise, tau } => ReplayMode::Sampled {
                noise: noise.clone(),
                tau: *tau,
            },
            AttentionMode::Mean => ReplayMode::Mean,
            AttentionMode::Fixed => ReplayMode::Fixed(output.attention.clone()),
        })
    }
}

/// Re-runs the forward pass deterministically under possibly perturbed
/// parameters, replaying the recorded noise and dropout scales.
pub fn replay_forward(
    sample: &ClipSample,
    params: &ModelParams,
    mode: &ReplayMode,
    dropout_scale: Option<Vec<f64>>,
) -> Result<ModelOutput> {
    match mode {
        ReplayMode::Sampled { noise, tau } => {
            forward_with_noise(sample, params, *tau, noise.clone(), dropout_scale)
        }
        ReplayMode::Mean => forward_mean_attention(sample, params, dropout_scale),
        ReplayMode::Fixed(map) => forward_fixed_attention(sample, params, map, dropout_scale),
    }
}

/// Worst relative finite-difference error per parameter group.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub group_errors: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

/// Central-difference verification of [`backward`]. Differences
/// [`objective_value`] over every parameter element at the given step,
/// replaying the recorded noise, and reports the worst relative error with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check(
    sample: &ClipSample,
    params: &ModelParams,
    output: &ModelOutput,
    obj: &Objective,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = backward(sample, params, output, obj)?;
    let mode = ReplayMode::from_output(output)?;
    let dropout_scale = output
        .trace
        .as_ref()
        .and_then(|t| t.dropout_scale.clone());

    let mut group_errors = Vec::with_capacity(8);
    let mut max_rel = 0.0f64;
    let mut work = params.clone();
    for (gi, name) in TENSOR_NAMES.iter().enumerate() {
        let len = work.tensors()[gi].len();
        let mut worst = 0.0f64;
        for ei in 0..len {
            let orig = work.tensors()[gi][ei];
            work.tensors_mut()[gi][ei] = orig + step;
            let plus = objective_value(
                &replay_forward(sample, &work, &mode, dropout_scale.clone())?,
                sample.label,
                obj,
            )?;
            work.tensors_mut()[gi][ei] = orig - step;
            let minus = objective_value(
                &replay_forward(sample, &work, &mode, dropout_scale.clone())?,
                sample.label,
                obj,
            )?;
            work.tensors_mut()[gi][ei] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.tensors[gi][ei];
            // Directions with an exactly-zero gradient (the gaze bias is a
            // no-op through softmax) still pick up ~1e-11 of cancellation
            // noise in the difference; treat both-near-zero as a match.
            if a.abs() < 1e-9 && numeric.abs() < 1e-9 {
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
        group_errors.push((name.to_string(), worst));
        max_rel = max_rel.max(worst);
    }
    Ok(GradCheckReport {
        group_errors,
        max_rel_error: max_rel,
    })
}

/// Randomized gradient-check suite over small configurations covering every
/// parameter group, both prior modes, the deterministic MLE path, fixed
/// attention, and dropout on/off.
pub fn gradcheck_suite(n_configs: usize, step: f64, seed: u64) -> Result<Vec<GradCheckReport>> {
    let dims = ModelDims { d: 3, h: 4, c: 3, k: 3 };
    let shape = GridShape::new(1, 3, 3)?;
    let mut reports = Vec::with_capacity(n_configs);
    for i in 0..n_configs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64, 0xABCD));
        let params = perturbed_params(dims, &mut rng)?;
        let sample = ClipSample {
            shape,
            features: (0..shape.cells() * dims.d)
                .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
                .collect(),
            gaze: vec![crate::prior::GazeRecord::fixation(
                0,
                rng.gen::<f64>(),
                rng.gen::<f64>(),
            )],
            label: i % dims.k,
        };
        let prior_cfg = PriorConfig::default();
        let dropout_on = i % 3 == 1;
        let report = match i % 4 {
            // Stochastic forward, gaze prior.
            0 | 1 => {
                let prior = build_prior(&sample.gaze, &prior_cfg, shape)?;
                let output = forward_train(
                    &sample,
                    &params,
                    2.0,
                    &mut rng,
                    if dropout_on { 0.5 } else { 0.0 },
                    dropout_on,
                )?;
                let obj = Objective {
                    kl_prior: Some((&prior, 1.0)),
                    gaze_bce: None,
                };
                finite_diff_check(&sample, &params, &output, &obj, step)?
            }
            // Stochastic forward, uniform prior.
            2 => {
                let prior = GridDist::uniform(shape);
                let output = forward_train(&sample, &params, 2.0, &mut rng, 0.0, false)?;
                let obj = Objective {
                    kl_prior: Some((&prior, 1.0)),
                    gaze_bce: None,
                };
                finite_diff_check(&sample, &params, &output, &obj, step)?
            }
            // Deterministic MLE path with BCE supervision.
            _ => {
                let hits = aggregate_fixations(&sample.gaze, 8, shape);
                let mut targets = vec![0.0; shape.cells()];
                for (t, r, c) in hits {
                    targets[shape.index(t, r, c)] = 1.0;
                }
                let output = forward_mean_attention(&sample, &params, None)?;
                let obj = Objective {
                    kl_prior: None,
                    gaze_bce: Some((&targets, 1.0)),
                };
                finite_diff_check(&sample, &params, &output, &obj, step)?
            }
        };
        reports.push(report);
    }
    Ok(reports)
}

/// Params with a randomized (nonzero) gaze head so the check exercises the
/// attention path away from the uniform stationary point.
fn perturbed_params<R: Rng>(dims: ModelDims, rng: &mut R) -> Result<ModelParams> {
    let mut params = ModelParams::init(dims, rng.gen())?;
    for w in &mut params.gaze_head.weights {
        *w = rng.gen::<f64>() - 0.5;
    }
    for b in params
        .encoder
        .bias
        .iter_mut()
        .chain(&mut params.classifier.bias)
    {
        *b = rng.gen::<f64>() * 0.2 - 0.1;
    }
    Ok(params)
}
