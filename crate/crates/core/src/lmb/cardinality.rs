//! Cardinality distribution of a multi-Bernoulli population.

use super::FilterError;

/// Exact probability mass function of the number of existing targets.
///
/// The population is a union of independent Bernoulli components with
/// existence probabilities `existences`; the pmf over `n = 0..=len` is their
/// convolution, built in O(len^2) rather than by enumerating the 2^len
/// outcomes. Components with `r = 1` simply shift the distribution.
pub fn cardinality_distribution(existences: &[f64]) -> Result<Vec<f64>, FilterError> {
    for &r in existences {
        if !r.is_finite() || !(0.0..=1.0).contains(&r) {
            return Err(FilterError::Domain(format!(
                "existence probability {r} outside [0,1]"
            )));
        }
    }
    let mut pmf = vec![1.0];
    for &r in existences {
        let mut next = vec![0.0; pmf.len() + 1];
        for (n, &p) in pmf.iter().enumerate() {
            next[n] += p * (1.0 - r);
            next[n + 1] += p * r;
        }
        pmf = next;
    }
    Ok(pmf)
}

/// Mean of a cardinality pmf; for a multi-Bernoulli population this equals
/// the sum of the existence probabilities.
pub fn cardinality_mean(pmf: &[f64]) -> f64 {
    pmf.iter().enumerate().map(|(n, &p)| n as f64 * p).sum()
}
