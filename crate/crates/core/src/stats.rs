//! Small statistical helpers shared by tests and the synthetic harness.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail p-value of a chi-square statistic.
pub fn chi_square_p_value(chi2: f64, dof: usize) -> f64 {
    let dist = ChiSquared::new(dof as f64).expect("dof > 0");
    1.0 - dist.cdf(chi2)
}

/// Chi-square goodness-of-fit p-value for observed counts against expected
/// probabilities. `dof = bins - 1`.
pub fn chi_square_gof(observed: &[usize], expected_probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected_probs.len());
    let n: usize = observed.iter().sum();
    let chi2: f64 = observed
        .iter()
        .zip(expected_probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    chi_square_p_value(chi2, observed.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_value_matches_known_quantile() {
        // chi2(1) 95th percentile is 3.841.
        let p = chi_square_p_value(3.841, 1);
        assert!((p - 0.05).abs() < 1e-3);
    }
}
