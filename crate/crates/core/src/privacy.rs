//! The perturbation matrix and the excess-risk bound calculators.
//!
//! The perturbation `b` is a `(d+1)×(d+1)` matrix with density proportional to
//! `exp(-(ε/2)‖b‖_F)`. In the `(d+1)²`-dimensional entry space this is drawn as a
//! Gamma-distributed norm (shape `(d+1)²`, scale `2/ε`) times a uniformly random
//! direction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

/// Printed with every privately trained model.
pub const PRIVACY_CAVEAT: &str = "The perturbation is drawn for privacy parameter epsilon, but the \
proven guarantee for the released classifier is epsilon' = epsilon + k, where \
k = log(1 + 2a/(n*lambda) + a^2/(n*lambda)^2) depends on a constant a that is not \
determined; k is therefore not reported.";

/// A sampled (or hand-built) perturbation matrix, stored row-major and not symmetrized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMatrix {
    dim: usize,
    entries: Vec<f64>,
    epsilon: Option<f64>,
    seed: Option<u64>,
}

impl PerturbationMatrix {
    /// Wraps explicit entries (no sampling metadata).
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("perturbation dimension must be at least 1".into()));
        }
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: entries.len() });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("perturbation entry".into()));
        }
        Ok(PerturbationMatrix { dim, entries, epsilon: None, seed: None })
    }

    pub fn zeros(dim: usize) -> Self {
        PerturbationMatrix { dim, entries: vec![0.0; dim * dim], epsilon: None, seed: None }
    }

    /// `d + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn frob_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `(b + bᵀ)/2`, the part of `b` visible to symmetric parameters.
    pub fn symmetric_part(&self) -> SymMatrix {
        SymMatrix::from_row_major(self.dim, self.entries.clone()).expect("square by construction")
    }

    /// `Σ_ij b_ij Φ_ij`.
    pub fn inner(&self, phi: &SymMatrix) -> f64 {
        debug_assert_eq!(phi.dim(), self.dim);
        self.entries.iter().zip(phi.as_slice()).map(|(a, b)| a * b).sum()
    }

    /// Entrywise sum, keeping no sampling metadata.
    pub fn add(&self, other: &PerturbationMatrix) -> Result<PerturbationMatrix> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let entries = self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect();
        PerturbationMatrix::new(self.dim, entries)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Draws `b` for feature dimension `d` using the caller's RNG. The seed is not known
/// here and is left unrecorded.
pub fn sample_perturbation<R: Rng + ?Sized>(d: usize, epsilon: f64, rng: &mut R) -> Result<PerturbationMatrix> {
    if d < 1 {
        return Err(Error::InvalidParameter("feature dimension must be at least 1".into()));
    }
    check_epsilon(epsilon)?;
    let dim = d + 1;
    let count = dim * dim;
    let gamma =
        Gamma::new(count as f64, 2.0 / epsilon).map_err(|e| Error::InvalidParameter(format!("gamma law: {e}")))?;
    let norm: f64 = gamma.sample(rng);
    let mut direction: Vec<f64> = Vec::with_capacity(count);
    let mut sq = 0.0;
    // A zero vector has probability zero; redraw rather than divide by it.
    while sq == 0.0 {
        direction.clear();
        direction.extend((0..count).map(|_| -> f64 { StandardNormal.sample(rng) }));
        sq = direction.iter().map(|v: &f64| v * v).sum();
    }
    let scale = norm / sq.sqrt();
    let entries = direction.into_iter().map(|v| v * scale).collect();
    Ok(PerturbationMatrix { dim, entries, epsilon: Some(epsilon), seed: None })
}

/// Deterministic draw from a ChaCha8 stream seeded with `seed`; the seed is recorded.
pub fn sample_perturbation_seeded(d: usize, epsilon: f64, seed: u64) -> Result<PerturbationMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = sample_perturbation(d, epsilon, &mut rng)?;
    b.seed = Some(seed);
    Ok(b)
}

/// Privacy level and the confidence parameter used by the bound calculators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        check_delta(delta)?;
        Ok(PrivacyBudget { epsilon, delta })
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn check_common(d: usize, classes: usize, epsilon: f64, lambda: f64, delta: f64) -> Result<()> {
    if d < 1 || classes < 1 {
        return Err(Error::InvalidParameter("dimension and class count must be positive".into()));
    }
    check_epsilon(epsilon)?;
    check_delta(delta)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Norm level exceeded with probability at most `δ`: `2(d+1)² log(d/δ) / ε`.
///
/// Requires `0 < δ < d` so that the logarithm is positive.
pub fn noise_norm_tail_bound(d: usize, epsilon: f64, delta: f64) -> Result<f64> {
    if d < 1 {
        return Err(Error::InvalidParameter("feature dimension must be at least 1".into()));
    }
    check_epsilon(epsilon)?;
    if !(delta > 0.0 && delta < d as f64) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, d), got {delta}")));
    }
    let side = (d + 1) as f64;
    Ok(2.0 * side * side * (d as f64 / delta).ln() / epsilon)
}

/// Additive regularized empirical excess-risk term `8(d+1)⁴ C log²(d/δ) / (ε² λ)`.
pub fn empirical_risk_bound(d: usize, classes: usize, epsilon: f64, lambda: f64, delta: f64) -> Result<f64> {
    check_common(d, classes, epsilon, lambda, delta)?;
    Ok(quadratic_term(d, classes, epsilon, lambda, delta))
}

fn quadratic_term(d: usize, classes: usize, epsilon: f64, lambda: f64, delta: f64) -> f64 {
    let side = (d + 1) as f64;
    let log = (d as f64 / delta).ln();
    8.0 * side.powi(4) * classes as f64 * log * log / (epsilon * epsilon * lambda)
}

/// The three terms of the true excess-risk bound, in displayed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueRiskTerms {
    /// `4√d (d+1)² C log(d/δ) / (ελ)`
    pub trace_term: f64,
    /// `8(d+1)⁴ C log²(d/δ) / (ε²λ)`
    pub empirical_term: f64,
    /// `16 (32 + log(1/δ)) / (λ n)`
    pub sample_term: f64,
}

impl TrueRiskTerms {
    pub fn total(&self) -> f64 {
        self.trace_term + self.empirical_term + self.sample_term
    }
}

pub fn true_risk_terms(
    d: usize,
    classes: usize,
    n: usize,
    epsilon: f64,
    lambda: f64,
    delta: f64,
) -> Result<TrueRiskTerms> {
    check_common(d, classes, epsilon, lambda, delta)?;
    if n < 1 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    let side = (d + 1) as f64;
    let log = (d as f64 / delta).ln();
    Ok(TrueRiskTerms {
        trace_term: 4.0 * (d as f64).sqrt() * side * side * classes as f64 * log / (epsilon * lambda),
        empirical_term: quadratic_term(d, classes, epsilon, lambda, delta),
        sample_term: 16.0 * (32.0 + (1.0 / delta).ln()) / (lambda * n as f64),
    })
}

/// Additive true excess-risk bound (sum of [`TrueRiskTerms`]).
pub fn true_risk_bound(d: usize, classes: usize, n: usize, epsilon: f64, lambda: f64, delta: f64) -> Result<f64> {
    Ok(true_risk_terms(d, classes, n, epsilon, lambda, delta)?.total())
}
