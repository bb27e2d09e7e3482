//! Planted-attention synthetic task with a known-generative oracle.
//!
//! Each clip hides a class prototype in one grid cell; every other cell is
//! noise. Gaze records point at the planted cell (with jitter) when they are
//! fixations, mirroring the premise that the gazed region suffices to
//! identify the action. The oracle classifies with the true planted cell
//! and generative parameters, calibrating every comparison margin.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDist, GridShape};
use crate::learning::{derive_seed, train, EpochLog, FixedAttention, TrainConfig, TrainMode};
use crate::metrics::{GazeEvalItem, MetricsReport, PrAveraging};
use crate::model::{
    forward_fixed_attention, forward_infer, ClipSample, ModelDims, ModelParams,
};
use crate::parallel::map_range;
use crate::prior::{aggregate_fixations, build_prior, GazeKind, GazeRecord, PriorConfig};

/// Generator parameters. The gaze-kind mix defaults to the observed
/// tracker statistics: 53.6% fixation, 26.1% saccade, 17.0% unknown,
/// 3.3% untracked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub shape: GridShape,
    /// Descriptor channels per cell.
    pub d: usize,
    /// Action classes.
    pub k: usize,
    pub signal_strength: f64,
    pub noise_std: f64,
    /// Std of fixation jitter in normalized image coordinates.
    pub gaze_jitter_std: f64,
    /// Probabilities over (fixation, saccade, unknown, untracked).
    pub kind_mix: [f64; 4],
    /// Gaze records emitted per temporal slice.
    pub frames_per_slice: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            shape: GridShape::default(),
            d: 8,
            k: 6,
            // Calibrated via oracle runs: oracle accuracy ~ 0.95-0.97 and a
            // trained uniform_pool ~ 0.37 on the test split at these values.
            signal_strength: 4.5,
            noise_std: 1.0,
            gaze_jitter_std: 0.08,
            kind_mix: [0.536, 0.261, 0.170, 0.033],
            frames_per_slice: 8,
            n_train: 360,
            n_test: 240,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::InvalidParameter("d and k must be >= 1".into()));
        }
        if self.signal_strength < 0.0 || self.noise_std < 0.0 || self.gaze_jitter_std < 0.0 {
            return Err(Error::InvalidParameter(
                "strengths and stds must be >= 0".into(),
            ));
        }
        let mix_sum: f64 = self.kind_mix.iter().sum();
        if (mix_sum - 1.0).abs() > 1e-9 || self.kind_mix.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidParameter("kind_mix must sum to 1".into()));
        }
        if self.n_train == 0 || self.frames_per_slice == 0 {
            return Err(Error::InvalidParameter(
                "n_train and frames_per_slice must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Hidden generative state for one sample, available only to the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub planted_cell: usize,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub samples: Vec<ClipSample>,
    pub truth: Vec<SampleTruth>,
    /// Unit-norm class prototypes, `k x d`, drawn once per dataset seed.
    pub prototypes: Vec<Vec<f64>>,
    pub n_train: usize,
}

impl SynthDataset {
    pub fn train_samples(&self) -> &[ClipSample] {
        &self.samples[..self.n_train]
    }

    pub fn test_samples(&self) -> &[ClipSample] {
        &self.samples[self.n_train..]
    }
}

fn sample_kind<R: Rng>(mix: &[f64; 4], rng: &mut R) -> GazeKind {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in mix.iter().enumerate() {
        acc += p;
        if u < acc {
            return [
                GazeKind::Fixation,
                GazeKind::Saccade,
                GazeKind::Unknown,
                GazeKind::Untracked,
            ][i];
        }
    }
    GazeKind::Untracked
}

/// Deterministic generation: prototypes from the dataset seed, every sample
/// from a derived per-sample stream, so the dataset is byte-identical for a
/// given config regardless of parallelism.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, 0x9909));
    let normal = Normal::new(0.0, 1.0).unwrap();
    let prototypes: Vec<Vec<f64>> = (0..cfg.k)
        .map(|_| {
            let mut v: Vec<f64> = (0..cfg.d).map(|_| normal.sample(&mut proto_rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in &mut v {
                *x /= norm;
            }
            v
        })
        .collect();

    let total = cfg.n_train + cfg.n_test;
    let shape = cfg.shape;
    let cells = shape.cells();
    let prototypes_ref = &prototypes;
    let generated: Vec<(ClipSample, SampleTruth)> = map_range(total, |idx| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, idx as u64));
        let label = rng.gen_range(0..cfg.k);
        let planted_cell = rng.gen_range(0..cells);
        let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).unwrap();
        let mut features = vec![0.0; cells * cfg.d];
        if cfg.noise_std > 0.0 {
            for f in &mut features {
                *f = noise.sample(&mut rng);
            }
        }
        for (i, p) in prototypes_ref[label].iter().enumerate() {
            features[planted_cell * cfg.d + i] += cfg.signal_strength * p;
        }

        let (_, row, col) = shape.coords(planted_cell);
        let center_u = (col as f64 + 0.5) / shape.n as f64;
        let center_v = (row as f64 + 0.5) / shape.m as f64;
        let jitter = Normal::new(0.0, cfg.gaze_jitter_std.max(f64::MIN_POSITIVE)).unwrap();
        let mut gaze = Vec::with_capacity(shape.t * cfg.frames_per_slice);
        for slice in 0..shape.t {
            for frame in 0..cfg.frames_per_slice {
                let frame_index = slice * cfg.frames_per_slice + frame;
                let kind = sample_kind(&cfg.kind_mix, &mut rng);
                let position = match kind {
                    GazeKind::Fixation => {
                        let (du, dv) = if cfg.gaze_jitter_std > 0.0 {
                            (jitter.sample(&mut rng), jitter.sample(&mut rng))
                        } else {
                            (0.0, 0.0)
                        };
                        Some((
                            (center_u + du).clamp(0.0, 1.0),
                            (center_v + dv).clamp(0.0, 1.0),
                        ))
                    }
                    GazeKind::Saccade | GazeKind::Unknown => {
                        Some((rng.gen::<f64>(), rng.gen::<f64>()))
                    }
                    GazeKind::Untracked => None,
                };
                gaze.push(GazeRecord {
                    frame_index,
                    kind,
                    position,
                });
            }
        }
        (
            ClipSample {
                shape,
                features,
                gaze,
                label,
            },
            SampleTruth { planted_cell },
        )
    });

    let (samples, truth) = generated.into_iter().unzip();
    Ok(SynthDataset {
        config: *cfg,
        samples,
        truth,
        prototypes,
        n_train: cfg.n_train,
    })
}

/// Nearest-prototype classification at the true planted cell using the known
/// generative parameters: the reference every margin is measured against.
/// Returns accuracy over the test split.
pub fn oracle_accuracy(ds: &SynthDataset) -> f64 {
    let d = ds.config.d;
    let test = &ds.samples[ds.n_train..];
    let truth = &ds.truth[ds.n_train..];
    let correct = test
        .iter()
        .zip(truth)
        .filter(|(sample, t)| {
            let feat = &sample.features[t.planted_cell * d..(t.planted_cell + 1) * d];
            let best = ds
                .prototypes
                .iter()
                .map(|p| p.iter().zip(feat).map(|(a, b)| a * b).sum::<f64>())
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            best == sample.label
        })
        .count();
    correct as f64 / test.len() as f64
}

/// The six evaluated variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Fixed uniform attention (backbone-only stand-in).
    UniformPool,
    /// Fixed 2D Gaussian attention fit to training fixation cells.
    CenterPrior,
    /// Pool with the per-clip gaze prior itself, train and test.
    GtGazePool,
    /// Deterministic gaze head trained with per-cell sigmoid cross entropy.
    GazeMle,
    /// Full stochastic model with fixation/uniform gaze priors.
    StochasticWithGaze,
    /// Full stochastic model with the weak uniform prior.
    StochasticNoGaze,
}

pub const ALL_BASELINES: [Baseline; 6] = [
    Baseline::UniformPool,
    Baseline::CenterPrior,
    Baseline::GtGazePool,
    Baseline::GazeMle,
    Baseline::StochasticWithGaze,
    Baseline::StochasticNoGaze,
];

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::UniformPool => "uniform_pool",
            Baseline::CenterPrior => "center_prior",
            Baseline::GtGazePool => "gt_gaze_pool",
            Baseline::GazeMle => "gaze_mle",
            Baseline::StochasticWithGaze => "stochastic_with_gaze",
            Baseline::StochasticNoGaze => "stochastic_no_gaze",
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Baseline> {
        ALL_BASELINES
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown baseline '{s}'")))
    }
}

/// Shared budgets for every baseline run; all variants use the same
/// initialization seed and parameter shapes so comparisons are controlled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Encoder hidden width.
    pub h: usize,
    /// Pooled feature channels.
    pub c: usize,
    pub prior: PriorConfig,
    pub pr_averaging: PrAveraging,
    /// Weight on the per-cell cross entropy of the gaze-MLE baseline.
    pub mle_bce_weight: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            h: 64,
            c: 32,
            prior: PriorConfig::default(),
            pr_averaging: PrAveraging::Micro,
            mle_bce_weight: 1.0,
        }
    }
}

impl RunConfig {
    pub fn dims(&self, synth: &SynthConfig) -> ModelDims {
        ModelDims {
            d: synth.d,
            h: self.h,
            c: self.c,
            k: synth.k,
        }
    }
}

/// Result of one baseline run.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineOutcome {
    pub baseline: Baseline,
    pub report: MetricsReport,
    pub log: Vec<EpochLog>,
}

/// Fit a fixed 2D Gaussian attention map to training fixation points.
fn fit_center_prior(train_samples: &[ClipSample], shape: GridShape) -> GridDist {
    let mut points: Vec<(f64, f64)> = Vec::new();
    for sample in train_samples {
        for rec in &sample.gaze {
            if rec.kind == GazeKind::Fixation {
                if let Some((u, v)) = rec.position {
                    points.push((u * shape.n as f64, v * shape.m as f64));
                }
            }
        }
    }
    if points.is_empty() {
        return GridDist::uniform(shape);
    }
    let n = points.len() as f64;
    let (mut mu, mut mv) = (0.0, 0.0);
    for &(u, v) in &points {
        mu += u;
        mv += v;
    }
    mu /= n;
    mv /= n;
    let (mut su, mut sv) = (0.0, 0.0);
    for &(u, v) in &points {
        su += (u - mu).powi(2);
        sv += (v - mv).powi(2);
    }
    let su = (su / n).sqrt().max(0.25);
    let sv = (sv / n).sqrt().max(0.25);

    let mut mass = vec![0.0; shape.cells()];
    for idx in 0..shape.cells() {
        let (_, row, col) = shape.coords(idx);
        let du = (col as f64 + 0.5 - mu) / su;
        let dv = (row as f64 + 0.5 - mv) / sv;
        mass[idx] = (-0.5 * (du * du + dv * dv)).exp();
    }
    GridDist::from_mass(shape, mass).unwrap_or_else(|_| GridDist::uniform(shape))
}

/// Trains (where applicable) and evaluates one variant on the dataset's
/// train/test split.
pub fn run_baseline(
    baseline: Baseline,
    ds: &SynthDataset,
    cfg: &RunConfig,
) -> Result<BaselineOutcome> {
    let dims = cfg.dims(&ds.config);
    let train_samples = ds.train_samples();
    let test_samples = ds.test_samples();
    if test_samples.is_empty() {
        return Err(Error::Validation("dataset has no test split".into()));
    }

    let center_map = fit_center_prior(train_samples, ds.config.shape);
    let mode = match baseline {
        Baseline::UniformPool => TrainMode::FixedAttention(FixedAttention::Uniform),
        Baseline::CenterPrior => {
            TrainMode::FixedAttention(FixedAttention::Shared(center_map.clone()))
        }
        Baseline::GtGazePool => {
            TrainMode::FixedAttention(FixedAttention::PerSampleGaze(cfg.prior))
        }
        Baseline::GazeMle => TrainMode::GazeMle {
            bce_weight: cfg.mle_bce_weight,
            window_frames: cfg.prior.window_frames,
        },
        Baseline::StochasticWithGaze => TrainMode::StochasticGaze(cfg.prior),
        Baseline::StochasticNoGaze => TrainMode::StochasticUniform,
    };

    let (params, log) = train(train_samples, dims, &cfg.train, &mode)?;
    let report = evaluate(
        baseline,
        &params,
        test_samples,
        cfg,
        ds.config.k,
        Some(&center_map),
    )?;
    Ok(BaselineOutcome {
        baseline,
        report,
        log,
    })
}

/// Evaluates trained parameters on a test set: action scores from the
/// variant's deterministic forward, gaze maps from the variant's predictor.
pub fn evaluate(
    baseline: Baseline,
    params: &ModelParams,
    test_samples: &[ClipSample],
    cfg: &RunConfig,
    k: usize,
    center_map: Option<&GridDist>,
) -> Result<MetricsReport> {
    let shared_map = match baseline {
        // The center prior is fit on training fixations and reused at test.
        Baseline::CenterPrior => Some(match center_map {
            Some(map) => map.clone(),
            None => {
                return Err(Error::ContractViolation(
                    "center_prior evaluation requires the fitted map".into(),
                ))
            }
        }),
        _ => None,
    };
    let results: Vec<Result<(Vec<f64>, GridDist, usize)>> =
        crate::parallel::map_slice(test_samples, |sample| {
            let (scores, gaze_map) = match baseline {
                Baseline::UniformPool => {
                    let map = GridDist::uniform(sample.shape);
                    let out = forward_fixed_attention(sample, params, &map, None)?;
                    (out.class_probs, map)
                }
                Baseline::CenterPrior => {
                    let map = shared_map.clone().unwrap();
                    let out = forward_fixed_attention(sample, params, &map, None)?;
                    (out.class_probs, map)
                }
                Baseline::GtGazePool => {
                    let map = build_prior(&sample.gaze, &cfg.prior, sample.shape)?;
                    let out = forward_fixed_attention(sample, params, &map, None)?;
                    (out.class_probs, map)
                }
                Baseline::GazeMle
                | Baseline::StochasticWithGaze
                | Baseline::StochasticNoGaze => {
                    let out = forward_infer(sample, params)?;
                    (out.class_probs, out.gaze_dist)
                }
            };
            Ok((scores, gaze_map, sample.label))
        });

    let mut score_vectors = Vec::with_capacity(test_samples.len());
    let mut labels = Vec::with_capacity(test_samples.len());
    let mut gaze_items = Vec::with_capacity(test_samples.len());
    for (res, sample) in results.into_iter().zip(test_samples) {
        let (scores, gaze_map, label) = res?;
        let positives: BTreeSet<usize> =
            aggregate_fixations(&sample.gaze, cfg.prior.window_frames, sample.shape)
                .into_iter()
                .map(|(t, r, c)| sample.shape.index(t, r, c))
                .collect();
        gaze_items.push(GazeEvalItem::new(gaze_map, positives));
        score_vectors.push(scores);
        labels.push(label);
    }
    MetricsReport::build(&gaze_items, &score_vectors, &labels, k, cfg.pr_averaging)
}
