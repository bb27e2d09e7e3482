//! Discrete distributions on attention grids.
//!
//! An attention grid is a `t x m x n` lattice of cells (temporal slices by
//! rows by columns). [`LogitGrid`] holds unnormalized scores, [`GridDist`]
//! a proper probability mass function over the cells. Sampling uses the
//! Gumbel-Softmax relaxation so that a draw is itself a valid distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to prior probabilities before taking logs in the KL term.
pub const EPS_FLOOR: f64 = 1e-8;

/// Clamp bounds for the uniform draw feeding the double-log Gumbel transform.
const GUMBEL_U_MIN: f64 = 1e-12;
const GUMBEL_U_MAX: f64 = 1.0 - 1e-12;

/// Dimensions of an attention grid: `t` temporal slices of `m x n` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub t: usize,
    pub m: usize,
    pub n: usize,
}

impl GridShape {
    pub fn new(t: usize, m: usize, n: usize) -> Result<Self> {
        if t == 0 || m == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be >= 1, got {t}x{m}x{n}"
            )));
        }
        Ok(GridShape { t, m, n })
    }

    /// Total number of cells.
    pub fn cells(&self) -> usize {
        self.t * self.m * self.n
    }

    /// Flat index of cell `(t, row, col)`.
    pub fn index(&self, t: usize, row: usize, col: usize) -> usize {
        debug_assert!(t < self.t && row < self.m && col < self.n);
        (t * self.m + row) * self.n + col
    }

    /// Inverse of [`GridShape::index`].
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let col = idx % self.n;
        let rest = idx / self.n;
        (rest / self.m, rest % self.m, col)
    }
}

impl Default for GridShape {
    /// One temporal slice at 7x7 spatial resolution.
    fn default() -> Self {
        GridShape { t: 1, m: 7, n: 7 }
    }
}

/// Unnormalized per-cell scores. Every value must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrid {
    pub shape: GridShape,
    pub values: Vec<f64>,
}

impl LogitGrid {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.cells() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for {:?}, got {}",
                shape.cells(),
                shape,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite logit".into()));
        }
        Ok(LogitGrid { shape, values })
    }

    pub fn zeros(shape: GridShape) -> Self {
        LogitGrid {
            values: vec![0.0; shape.cells()],
            shape,
        }
    }
}

/// Normalized probability mass over a grid. Sums to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDist {
    pub shape: GridShape,
    pub probs: Vec<f64>,
}

impl GridDist {
    /// Build from raw nonnegative mass, renormalizing.
    pub fn from_mass(shape: GridShape, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != shape.cells() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                shape.cells(),
                mass.len()
            )));
        }
        if mass.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "probability mass must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("total mass is zero".into()));
        }
        let probs = mass.into_iter().map(|v| v / total).collect();
        Ok(GridDist { shape, probs })
    }

    /// Uniform distribution: every cell gets `1 / (t*m*n)`.
    pub fn uniform(shape: GridShape) -> Self {
        let p = 1.0 / shape.cells() as f64;
        GridDist {
            probs: vec![p; shape.cells()],
            shape,
        }
    }

    /// All mass on one cell.
    pub fn one_hot(shape: GridShape, idx: usize) -> Self {
        let mut probs = vec![0.0; shape.cells()];
        probs[idx] = 1.0;
        GridDist { shape, probs }
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap()
    }

    /// Returns a copy with every cell floored at `eps` and renormalized.
    pub fn floored(&self, eps: f64) -> GridDist {
        let mass: Vec<f64> = self.probs.iter().map(|p| p.max(eps)).collect();
        let total: f64 = mass.iter().sum();
        GridDist {
            shape: self.shape,
            probs: mass.into_iter().map(|v| v / total).collect(),
        }
    }

    /// Checks the distribution invariants (used by tests and debug asserts).
    pub fn is_valid(&self) -> bool {
        self.probs.len() == self.shape.cells()
            && self.probs.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

/// Softmax over all cells, max-subtracted for stability.
pub fn normalize(logits: &LogitGrid) -> Result<GridDist> {
    if logits.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    Ok(softmax_unchecked(logits.shape, &logits.values))
}

pub(crate) fn softmax_unchecked(shape: GridShape, values: &[f64]) -> GridDist {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    GridDist { shape, probs }
}

/// Shannon entropy in nats, with `0 * log 0 := 0`.
pub fn entropy(d: &GridDist) -> f64 {
    d.probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

/// `KL[q || p] = sum q (log q - log p)` in nats. `p` is floored by
/// [`EPS_FLOOR`] so no cell contributes a log of zero.
pub fn kl_divergence(q: &GridDist, p: &GridDist) -> Result<f64> {
    if q.shape != p.shape {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            q.shape, p.shape
        )));
    }
    let p = p.floored(EPS_FLOOR);
    let kl: f64 = q
        .probs
        .iter()
        .zip(&p.probs)
        .map(|(&qi, &pi)| if qi > 0.0 { qi * (qi.ln() - pi.ln()) } else { 0.0 })
        .sum();
    // Floating error can leave a tiny negative residue when q == p.
    Ok(kl.max(0.0))
}

/// Draw standard Gumbel noise for every cell: `G = -log(-log U)`.
pub fn gumbel_noise<R: Rng + ?Sized>(shape: GridShape, rng: &mut R) -> Vec<f64> {
    (0..shape.cells())
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(GUMBEL_U_MIN, GUMBEL_U_MAX);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Gumbel-Softmax sample: `softmax((logits + G) / tau)`.
///
/// The output is itself a valid [`GridDist`]; as `tau -> 0` it approaches a
/// one-hot draw from the categorical distribution `normalize(logits)`.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    logits: &LogitGrid,
    tau: f64,
    rng: &mut R,
) -> Result<GridDist> {
    let noise = gumbel_noise(logits.shape, rng);
    gumbel_softmax_with_noise(logits, tau, &noise)
}

/// Deterministic half of the sampler: applies recorded noise. Used by the
/// backward pass and finite-difference checks to replay a draw exactly.
pub fn gumbel_softmax_with_noise(logits: &LogitGrid, tau: f64, noise: &[f64]) -> Result<GridDist> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    if logits.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    if noise.len() != logits.values.len() {
        return Err(Error::ShapeMismatch("noise length".into()));
    }
    let perturbed: Vec<f64> = logits
        .values
        .iter()
        .zip(noise)
        .map(|(&l, &g)| (l + g) / tau)
        .collect();
    Ok(softmax_unchecked(logits.shape, &perturbed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape_7x7() -> GridShape {
        GridShape::default()
    }

    #[test]
    fn normalize_all_zero_is_uniform() {
        let d = normalize(&LogitGrid::zeros(shape_7x7())).unwrap();
        for &p in &d.probs {
            assert!((p - 1.0 / 49.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_saturates_on_large_logit() {
        let mut logits = LogitGrid::zeros(shape_7x7());
        logits.values[10] = 50.0;
        let d = normalize(&logits).unwrap();
        assert!(d.probs[10] >= 1.0 - 1e-9);
    }

    #[test]
    fn normalize_hand_computed() {
        let shape = GridShape::new(1, 2, 2).unwrap();
        let logits = LogitGrid::new(
            shape,
            vec![0.0, 2.0f64.ln(), 3.0f64.ln(), 4.0f64.ln()],
        )
        .unwrap();
        let d = normalize(&logits).unwrap();
        let expected = [0.1, 0.2, 0.3, 0.4];
        for (p, e) in d.probs.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{p} vs {e}");
        }
    }

    #[test]
    fn normalize_rejects_non_finite() {
        let shape = GridShape::new(1, 1, 2).unwrap();
        assert!(LogitGrid::new(shape, vec![f64::NAN, 0.0]).is_err());
        let mut logits = LogitGrid::zeros(shape);
        logits.values[0] = f64::INFINITY;
        assert!(normalize(&logits).is_err());
    }

    #[test]
    fn entropy_one_hot_is_zero() {
        let d = GridDist::one_hot(shape_7x7(), 3);
        assert_eq!(entropy(&d), 0.0);
    }

    #[test]
    fn entropy_uniform_is_log_cells() {
        let d = GridDist::uniform(shape_7x7());
        assert!((entropy(&d) - 49.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_half_half() {
        let shape = GridShape::new(1, 2, 2).unwrap();
        let d = GridDist {
            shape,
            probs: vec![0.5, 0.5, 0.0, 0.0],
        };
        assert!((entropy(&d) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_of_identical_dists_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = shape_7x7();
        let mass: Vec<f64> = (0..shape.cells()).map(|_| rng.gen::<f64>() + 0.1).collect();
        let q = GridDist::from_mass(shape, mass).unwrap();
        assert!(kl_divergence(&q, &q).unwrap() < 1e-12);
    }

    #[test]
    fn kl_vs_uniform_identity_over_random_dists() {
        // KL[q || uniform] = log(cells) - H(q), checked against an
        // independent direct-sum computation.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = shape_7x7();
        for _ in 0..100 {
            let mass: Vec<f64> = (0..shape.cells()).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let q = GridDist::from_mass(shape, mass).unwrap();
            let kl = kl_divergence(&q, &GridDist::uniform(shape)).unwrap();
            let direct: f64 = q
                .probs
                .iter()
                .map(|&qi| qi * (qi.ln() - (1.0 / 49.0f64).ln()))
                .sum();
            assert!((kl - direct).abs() < 1e-12);
            assert!((kl - (49.0f64.ln() - entropy(&q))).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_one_hot_vs_uniform() {
        let q = GridDist::one_hot(shape_7x7(), 0);
        let p = GridDist::uniform(shape_7x7());
        let kl = kl_divergence(&q, &p).unwrap();
        assert!((kl - 49.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn kl_shape_mismatch_errors() {
        let q = GridDist::uniform(shape_7x7());
        let p = GridDist::uniform(GridShape::new(1, 3, 3).unwrap());
        assert!(kl_divergence(&q, &p).is_err());
    }

    #[test]
    fn gumbel_sample_is_valid_dist() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut logits = LogitGrid::zeros(shape_7x7());
        for v in &mut logits.values {
            *v = rng.gen::<f64>() * 4.0 - 2.0;
        }
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = gumbel_softmax_sample(&logits, 2.0, &mut rng).unwrap();
            assert!(s.is_valid());
            assert!(s.probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn gumbel_sample_rejects_nonpositive_tau() {
        let logits = LogitGrid::zeros(shape_7x7());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gumbel_softmax_sample(&logits, 0.0, &mut rng).is_err());
        assert!(gumbel_softmax_sample(&logits, -1.0, &mut rng).is_err());
    }

    #[test]
    fn sharp_tau_argmax_matches_perturbed_logits() {
        let mut logits = LogitGrid::zeros(shape_7x7());
        logits.values[5] = 1.0;
        logits.values[30] = 0.5;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = gumbel_noise(logits.shape, &mut rng);
            let sample = gumbel_softmax_with_noise(&logits, 0.01, &noise).unwrap();
            let perturbed_argmax = logits
                .values
                .iter()
                .zip(&noise)
                .map(|(l, g)| l + g)
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            assert_eq!(sample.argmax(), perturbed_argmax);
        }
    }

    #[test]
    fn sharp_tau_matches_categorical_frequencies() {
        // Gumbel-max trick: argmax frequency must match softmax(logits).
        // Oracle is a direct categorical sampler over the same draws count.
        let shape = GridShape::new(1, 1, 2).unwrap();
        let logits = LogitGrid::new(shape, vec![0.0, 3.0f64.ln()]).unwrap();
        let n = 100_000usize;

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hits = [0usize; 2];
        for _ in 0..n {
            let s = gumbel_softmax_sample(&logits, 0.01, &mut rng).unwrap();
            hits[s.argmax()] += 1;
        }

        // Direct categorical sampler as the independent oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut oracle_hits = [0usize; 2];
        for _ in 0..n {
            let u: f64 = rng.gen();
            oracle_hits[usize::from(u < 0.75)] += 1;
        }
        // Oracle sanity: close to the analytic 0.75.
        assert!((oracle_hits[1] as f64 / n as f64 - 0.75).abs() < 0.01);

        let freq = hits[1] as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.01, "freq {freq}");

        // Chi-square goodness of fit against (0.25, 0.75), 1 dof.
        let expected = [0.25 * n as f64, 0.75 * n as f64];
        let chi2: f64 = hits
            .iter()
            .zip(expected)
            .map(|(&h, e)| (h as f64 - e).powi(2) / e)
            .sum();
        let p = crate::stats::chi_square_p_value(chi2, 1);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn same_seed_gives_bit_identical_sample() {
        let mut logits = LogitGrid::zeros(shape_7x7());
        logits.values[12] = 1.5;
        let a = gumbel_softmax_sample(&logits, 2.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gumbel_softmax_sample(&logits, 2.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn mean_sample_argmax_tracks_logit_argmax() {
        // Empirical mean over many tau=2 samples stays a valid dist and its
        // argmax agrees with normalize(logits) when the top-two gap is wide.
        let mut logits = LogitGrid::zeros(shape_7x7());
        logits.values[17] = 1.0; // gap 1.0 > 0.5
        let shape = logits.shape;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mean = vec![0.0; shape.cells()];
        let draws = 100_000;
        for _ in 0..draws {
            let s = gumbel_softmax_sample(&logits, 2.0, &mut rng).unwrap();
            for (m, p) in mean.iter_mut().zip(&s.probs) {
                *m += p;
            }
        }
        for m in &mut mean {
            *m /= draws as f64;
        }
        let mean_dist = GridDist::from_mass(shape, mean).unwrap();
        assert!(mean_dist.is_valid());
        assert_eq!(mean_dist.argmax(), normalize(&logits).unwrap().argmax());
    }
}
