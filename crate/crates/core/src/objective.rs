//! Regularized objective `J`, perturbed objective `J_p`, and their gradients.
//!
//! ```text
//! J(Φ)   = L(Φ) + λ Σ_c trace(I_Φ Φ_c I_Φ)
//! J_p(Φ) = J(Φ) + Σ_c Σ_ij b_ij Φ_c,ij
//! ```
//!
//! `I_Φ` is the identity with its last diagonal entry zeroed, so the regularizer is the
//! trace of the inverse-covariance blocks. The same `b` is applied to every class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::loss::{self, HuberLoss};
use crate::model::LabeledDataset;
use crate::privacy::PerturbationMatrix;

/// Regularization weight `λ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub lambda: f64,
}

impl RegularizerSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(RegularizerSpec { lambda })
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// `I_Φ`: identity of size `dim` with the last diagonal entry set to zero.
pub fn truncated_identity(dim: usize) -> SymMatrix {
    let mut diag = vec![1.0; dim];
    diag[dim - 1] = 0.0;
    SymMatrix::from_diagonal(&diag)
}

/// `trace(I_Φ Φ I_Φ)`: the diagonal sum without the last entry.
pub fn truncated_trace(phi: &SymMatrix) -> f64 {
    (0..phi.dim() - 1).map(|i| phi.get(i, i)).sum()
}

/// `λ Σ_c trace(I_Φ Φ_c I_Φ)`.
pub fn regularizer(params: &[SymMatrix], lambda: f64) -> f64 {
    lambda * params.iter().map(truncated_trace).sum::<f64>()
}

/// `Σ_c ⟨b, Φ_c⟩`.
pub fn perturbation_term(params: &[SymMatrix], b: &PerturbationMatrix) -> Result<f64> {
    let mut total = 0.0;
    for phi in params {
        if phi.dim() != b.dim() {
            return Err(Error::DimensionMismatch { expected: phi.dim(), found: b.dim() });
        }
        total += b.inner(phi);
    }
    Ok(total)
}

pub fn objective_j(params: &[SymMatrix], data: &LabeledDataset, lambda: f64, loss: &HuberLoss) -> Result<f64> {
    Ok(loss::empirical_loss(params, data, loss)? + regularizer(params, lambda))
}

pub fn perturbed_objective(
    params: &[SymMatrix],
    data: &LabeledDataset,
    lambda: f64,
    loss: &HuberLoss,
    b: &PerturbationMatrix,
) -> Result<f64> {
    let term = perturbation_term(params, b)?;
    Ok(objective_j(params, data, lambda, loss)? + term)
}

/// Per-class gradient `∂L/∂Φ_c + λ I_Φ (+ sym(b))`.
pub fn objective_grad(
    params: &[SymMatrix],
    data: &LabeledDataset,
    lambda: f64,
    loss: &HuberLoss,
    b: Option<&PerturbationMatrix>,
) -> Result<Vec<SymMatrix>> {
    let mut grads = loss::empirical_loss_grad(params, data, loss)?;
    let mut shift = truncated_identity(data.dim() + 1).scale(lambda);
    if let Some(b) = b {
        if b.dim() != data.dim() + 1 {
            return Err(Error::DimensionMismatch { expected: data.dim() + 1, found: b.dim() });
        }
        shift.add_scaled(1.0, &b.symmetric_part());
    }
    for g in &mut grads {
        g.add_scaled(1.0, &shift);
    }
    Ok(grads)
}

/// Smallest eigenvalue of `λ I_Φ + sym(b)`.
///
/// Adding the same PSD matrix `D` to every `Φ_c` leaves all margins, and so the loss,
/// unchanged while moving `J_p` by `C ⟨λ I_Φ + sym(b), D⟩`. A negative value therefore
/// means `J_p` is unbounded below on the product of PSD cones.
pub fn common_shift_curvature(dim: usize, lambda: f64, b: Option<&PerturbationMatrix>) -> Result<f64> {
    let mut m = truncated_identity(dim).scale(lambda);
    if let Some(b) = b {
        if b.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: b.dim() });
        }
        m.add_scaled(1.0, &b.symmetric_part());
    }
    linalg::min_eigenvalue(&m)
}

/// The objective as a callable, optionally perturbed.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    data: &'a LabeledDataset,
    lambda: f64,
    loss: HuberLoss,
    perturbation: Option<&'a PerturbationMatrix>,
    shift: SymMatrix,
}

impl<'a> Objective<'a> {
    pub fn new(
        data: &'a LabeledDataset,
        lambda: f64,
        loss: HuberLoss,
        perturbation: Option<&'a PerturbationMatrix>,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        loss.validate()?;
        let dim = data.dim() + 1;
        let mut shift = truncated_identity(dim).scale(lambda);
        if let Some(b) = perturbation {
            if b.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: b.dim() });
            }
            shift.add_scaled(1.0, &b.symmetric_part());
        }
        Ok(Objective { data, lambda, loss, perturbation, shift })
    }

    pub fn data(&self) -> &LabeledDataset {
        self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn loss(&self) -> &HuberLoss {
        &self.loss
    }

    pub fn perturbation(&self) -> Option<&PerturbationMatrix> {
        self.perturbation
    }

    /// `J` or `J_p`.
    pub fn value(&self, params: &[SymMatrix]) -> Result<f64> {
        let mut v = objective_j(params, self.data, self.lambda, &self.loss)?;
        if let Some(b) = self.perturbation {
            v += perturbation_term(params, b)?;
        }
        Ok(v)
    }

    /// Unperturbed `J`, whatever the perturbation.
    pub fn unperturbed_value(&self, params: &[SymMatrix]) -> Result<f64> {
        objective_j(params, self.data, self.lambda, &self.loss)
    }

    pub fn gradient(&self, params: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
        let mut grads = loss::empirical_loss_grad(params, self.data, &self.loss)?;
        for g in &mut grads {
            g.add_scaled(1.0, &self.shift);
        }
        Ok(grads)
    }
}

/// Both sides of the midpoint convexity inequality for `J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub value_a: f64,
    pub value_b: f64,
    pub value_mid: f64,
    /// `(J(a) + J(b)) / 2 − J(mid)`; non-negative for a convex `J`.
    pub convexity_gap: f64,
    /// `(λ/8) Σ_c ‖a_c − b_c‖²`, the extra gap λ-strong convexity would guarantee.
    pub strong_convexity_slack: f64,
}

impl ConvexityReport {
    pub fn is_convex(&self, tolerance: f64) -> bool {
        self.convexity_gap >= -tolerance
    }

    pub fn meets_strong_convexity(&self, tolerance: f64) -> bool {
        self.convexity_gap >= self.strong_convexity_slack - tolerance
    }
}

pub fn midpoint_convexity_check(
    params_a: &[SymMatrix],
    params_b: &[SymMatrix],
    data: &LabeledDataset,
    lambda: f64,
    loss: &HuberLoss,
) -> Result<ConvexityReport> {
    if params_a.len() != params_b.len() {
        return Err(Error::DimensionMismatch { expected: params_a.len(), found: params_b.len() });
    }
    let mid: Vec<SymMatrix> = params_a
        .iter()
        .zip(params_b)
        .map(|(a, b)| {
            let mut m = a.scale(0.5);
            m.add_scaled(0.5, b);
            m
        })
        .collect();
    let diffs: Vec<SymMatrix> = params_a.iter().zip(params_b).map(|(a, b)| a.sub(b)).collect();
    let value_a = objective_j(params_a, data, lambda, loss)?;
    let value_b = objective_j(params_b, data, lambda, loss)?;
    let value_mid = objective_j(&mid, data, lambda, loss)?;
    let spread = linalg::frob_norm_set(&diffs);
    Ok(ConvexityReport {
        value_a,
        value_b,
        value_mid,
        convexity_gap: 0.5 * (value_a + value_b) - value_mid,
        strong_convexity_slack: lambda / 8.0 * spread * spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_dataset;

    fn toy() -> LabeledDataset {
        normalize_dataset(&[vec![0.5, 0.1], vec![-0.4, 0.2], vec![0.1, -0.6], vec![0.3, 0.3]], vec![0, 1, 2, 0], 3)
            .unwrap()
    }

    #[test]
    fn truncated_identity_shape() {
        let i = truncated_identity(4);
        assert_eq!(i, SymMatrix::from_diagonal(&[1.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn regularizer_examples() {
        assert_eq!(regularizer(&[SymMatrix::zeros(3), SymMatrix::zeros(3)], 1.0), 0.0);
        let d = 4;
        let eye = vec![SymMatrix::identity(d + 1); 2];
        assert_eq!(regularizer(&eye, 1.0), 2.0 * d as f64);
    }

    #[test]
    fn zero_perturbation_matches_j() {
        let data = toy();
        let loss = HuberLoss::default();
        let params = vec![SymMatrix::identity(3), SymMatrix::from_diagonal(&[2.0, 1.0, 0.5]), SymMatrix::zeros(3)];
        let j = objective_j(&params, &data, 0.7, &loss).unwrap();
        let jp = perturbed_objective(&params, &data, 0.7, &loss, &PerturbationMatrix::zeros(3)).unwrap();
        assert_eq!(j, jp);
        let b = PerturbationMatrix::new(3, (0..9).map(|v| v as f64 - 4.0).collect()).unwrap();
        let zeros = vec![SymMatrix::zeros(3); 3];
        assert_eq!(
            perturbed_objective(&zeros, &data, 0.7, &loss, &b).unwrap(),
            objective_j(&zeros, &data, 0.7, &loss).unwrap()
        );
    }

    #[test]
    fn gradient_in_zero_loss_region_is_regularizer() {
        let data = normalize_dataset(&[vec![0.5, 0.0], vec![-0.5, 0.0]], vec![0, 1], 2).unwrap();
        let phi = |mu: f64| {
            crate::model::from_gaussian_view(&crate::model::GaussianView {
                centroid: vec![mu, 0.0],
                inv_cov: SymMatrix::identity(2).scale(20.0),
                offset: 0.0,
            })
            .unwrap()
        };
        let params = vec![phi(0.5), phi(-0.5)];
        let lambda = 0.3;
        let loss = HuberLoss::default();
        let grads = objective_grad(&params, &data, lambda, &loss, None).unwrap();
        for g in &grads {
            assert_eq!(*g, truncated_identity(3).scale(lambda));
        }
        let b = PerturbationMatrix::new(3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]).unwrap();
        let shifted = objective_grad(&params, &data, lambda, &loss, Some(&b)).unwrap();
        for (g, s) in grads.iter().zip(&shifted) {
            assert!(s.sub(g).max_abs_diff(&b.symmetric_part()) < 1e-15);
        }
    }

    #[test]
    fn identical_pairs_have_no_gap() {
        let data = toy();
        let params = vec![SymMatrix::identity(3); 3];
        let r = midpoint_convexity_check(&params, &params, &data, 1.0, &HuberLoss::default()).unwrap();
        assert_eq!(r.convexity_gap, 0.0);
        assert_eq!(r.strong_convexity_slack, 0.0);
        assert!(r.is_convex(0.0));
    }

    #[test]
    fn common_shift_curvature_detects_unbounded_perturbations() {
        assert_eq!(common_shift_curvature(3, 1.0, None).unwrap(), 0.0);
        let mut e = vec![0.0; 9];
        e[8] = -0.5;
        let b = PerturbationMatrix::new(3, e).unwrap();
        assert!(common_shift_curvature(3, 1.0, Some(&b)).unwrap() < 0.0);
    }

    #[test]
    fn objective_struct_agrees_with_free_functions() {
        let data = toy();
        let loss = HuberLoss::default();
        let b = PerturbationMatrix::new(3, (0..9).map(|v| 0.1 * v as f64).collect()).unwrap();
        let params = vec![SymMatrix::identity(3), SymMatrix::from_diagonal(&[2.0, 1.0, 0.5]), SymMatrix::zeros(3)];
        let obj = Objective::new(&data, 0.7, loss, Some(&b)).unwrap();
        assert_eq!(obj.value(&params).unwrap(), perturbed_objective(&params, &data, 0.7, &loss, &b).unwrap());
        assert_eq!(obj.gradient(&params).unwrap(), objective_grad(&params, &data, 0.7, &loss, Some(&b)).unwrap());
        assert!(Objective::new(&data, 0.0, loss, None).is_err());
        assert!(Objective::new(&data, 1.0, loss, Some(&PerturbationMatrix::zeros(4))).is_err());
    }
}
