//! Projected gradient descent over a product of PSD cones.
//!
//! Each iteration takes a trial step (the Barzilai–Borwein estimate from the previous
//! iteration, or `initial_step` at the start), projects every class matrix back onto the
//! feasible set and backtracks until the sufficient-decrease condition
//!
//! ```text
//! f(Φ⁺) ≤ f(Φ) − (armijo_c / s) ‖Φ⁺ − Φ‖²
//! ```
//!
//! holds. In the interior this is the usual Armijo rule `armijo_c · s · ‖∇f‖²`.
//!
//! The feasible set is the PSD cone, optionally intersected with a Frobenius ball of
//! radius `param_radius` per class. Without it neither objective need have a minimizer:
//!
//! - The trace penalty only sees the inverse-covariance block. Letting `Ψ = α uuᵀ` shrink
//!   while the centroid runs off along `u` with `α‖μ‖` fixed turns a class score into an
//!   affine function at vanishing cost, so on separable data `J` keeps decreasing as the
//!   parameters grow.
//! - A common PSD shift `D` added to every class leaves the loss unchanged and moves
//!   `J_p` by `C ⟨λ I_Φ + sym(b), D⟩`, so whenever `λ I_Φ + sym(b)` has a negative
//!   eigenvalue `J_p` is unbounded below on the cones.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::loss::HuberLoss;
use crate::model::{self, ClassParams, GaussianView, LabeledDataset};
use crate::objective::{self, Objective};
use crate::privacy::PerturbationMatrix;

/// Ridge added to class covariances before inversion in the warm start.
pub const COVARIANCE_RIDGE: f64 = 1e-3;

/// Relative slack on the sufficient-decrease test, to absorb rounding in `f`.
const DECREASE_SLACK: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Convergence threshold on [`stationarity_residual`].
    pub grad_tolerance: f64,
    /// Trial step of the first iteration.
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
    /// Step reductions allowed per iteration before giving up.
    pub max_backtracks: usize,
    /// Step `s` of the projected-gradient residual `‖Φ − P(Φ − s∇f)‖ / s`.
    pub residual_step: f64,
    /// Per-class Frobenius bound on the parameters; `None` leaves only the PSD cone.
    pub param_radius: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 5000,
            grad_tolerance: 1e-5,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 60,
            residual_step: 1e-3,
            param_radius: Some(DEFAULT_PARAM_RADIUS),
        }
    }
}

/// Default per-class Frobenius bound.
pub const DEFAULT_PARAM_RADIUS: f64 = 10.0;

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        positive("grad_tolerance", self.grad_tolerance)?;
        positive("initial_step", self.initial_step)?;
        positive("residual_step", self.residual_step)?;
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidParameter("backtrack_factor must lie in (0, 1)".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidParameter("armijo_c must lie in (0, 1)".into()));
        }
        if let Some(r) = self.param_radius {
            positive("param_radius", r)?;
        }
        Ok(())
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub params: ClassParams,
    /// Objective (`J` or `J_p`) at the start and after every accepted step.
    pub objective_trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stationarity_residual: f64,
    /// The perturbation used, if any.
    pub perturbation: Option<PerturbationMatrix>,
    /// Smallest eigenvalue of `λ I_Φ + sym(b)`; negative means `J_p` is unbounded
    /// over the PSD cones and only the radius keeps the minimizer finite.
    pub common_shift_curvature: f64,
    /// Whether any class ended on the radius boundary.
    pub radius_active: bool,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl TrainReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trajectory.last().expect("trajectory holds the starting value")
    }
}

fn project(m: &SymMatrix, radius: Option<f64>) -> Result<SymMatrix> {
    match radius {
        Some(r) => linalg::psd_ball_project(m, r),
        None => linalg::psd_project(m),
    }
}

fn project_all(params: &[SymMatrix], radius: Option<f64>) -> Result<Vec<SymMatrix>> {
    params.iter().map(|m| project(m, radius)).collect()
}

/// Projected step `P(Φ − s G)` for every class.
fn projected_step(params: &[SymMatrix], grads: &[SymMatrix], step: f64, radius: Option<f64>) -> Result<Vec<SymMatrix>> {
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| {
            let mut trial = p.clone();
            trial.add_scaled(-step, g);
            project(&trial, radius)
        })
        .collect()
}

fn set_distance_sq(a: &[SymMatrix], b: &[SymMatrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum()
}

fn set_inner(a: &[SymMatrix], b: &[SymMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.inner(y)).sum()
}

/// `‖Φ − P(Φ − s ∇f(Φ))‖ / s` over all classes; zero exactly at constrained
/// stationary points and equal to `‖∇f‖` when the step stays feasible.
pub fn stationarity_residual(
    params: &[SymMatrix],
    objective: &Objective<'_>,
    step: f64,
    radius: Option<f64>,
) -> Result<f64> {
    let grads = objective.gradient(params)?;
    residual_from_grads(params, &grads, step, radius)
}

fn residual_from_grads(params: &[SymMatrix], grads: &[SymMatrix], step: f64, radius: Option<f64>) -> Result<f64> {
    let moved = projected_step(params, grads, step, radius)?;
    Ok(set_distance_sq(params, &moved).sqrt() / step)
}

/// Maximum-likelihood warm start: class means, inverse of the ridged sample covariance,
/// zero offsets. Classes with fewer than two members get an identity inverse covariance.
pub fn initialize_params(data: &LabeledDataset) -> Result<ClassParams> {
    let d = data.dim();
    let mut matrices = Vec::with_capacity(data.num_classes());
    for c in 0..data.num_classes() {
        let members: Vec<&[f64]> = data.iter().filter(|&(_, y)| y == c).map(|(x, _)| &x[..d]).collect();
        let count = members.len();
        let mut mean = vec![0.0; d];
        for x in &members {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v;
            }
        }
        if count > 0 {
            mean.iter_mut().for_each(|m| *m /= count as f64);
        }
        let inv_cov = if count < 2 {
            SymMatrix::identity(d)
        } else {
            let mut cov = SymMatrix::identity(d).scale(COVARIANCE_RIDGE);
            for x in &members {
                let centered: Vec<f64> = x.iter().zip(&mean).map(|(a, b)| a - b).collect();
                cov.add_outer(1.0 / (count - 1) as f64, &centered);
            }
            let eig = linalg::sym_eigen(&cov)?;
            let inv: Vec<f64> = eig.values.iter().map(|w| 1.0 / w).collect();
            eig.recompose_with(&inv)
        };
        let phi = model::from_gaussian_view(&GaussianView { centroid: mean, inv_cov, offset: 0.0 })?;
        matrices.push(linalg::psd_project(&phi)?);
    }
    ClassParams::new(matrices)
}

/// Minimizes `J` (or `J_p` when `perturbation` is given) from the warm start.
pub fn train(
    data: &LabeledDataset,
    lambda: f64,
    loss: HuberLoss,
    config: &OptimizerConfig,
    perturbation: Option<&PerturbationMatrix>,
) -> Result<TrainReport> {
    let init = initialize_params(data)?;
    train_from(init.into_inner(), data, lambda, loss, config, perturbation)
}

/// Like [`train`] but from explicit starting parameters (projected onto the feasible set).
pub fn train_from(
    init: Vec<SymMatrix>,
    data: &LabeledDataset,
    lambda: f64,
    loss: HuberLoss,
    config: &OptimizerConfig,
    perturbation: Option<&PerturbationMatrix>,
) -> Result<TrainReport> {
    let started = Instant::now();
    config.validate()?;
    if !data.in_unit_ball() {
        return Err(Error::InvalidData(format!(
            "training features must lie in the unit ball (max norm {})",
            data.max_feature_norm()
        )));
    }
    let objective = Objective::new(data, lambda, loss, perturbation)?;
    if init.len() != data.num_classes() {
        return Err(Error::DimensionMismatch { expected: data.num_classes(), found: init.len() });
    }
    let radius = config.param_radius;

    let mut params = project_all(&init, radius)?;
    let mut value = objective.value(&params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective at the starting point is {value}")));
    }
    let mut grads = objective.gradient(&params)?;
    let mut trajectory = vec![value];
    let mut step = config.initial_step;
    let mut converged = false;
    let mut residual = residual_from_grads(&params, &grads, config.residual_step, radius)?;
    let mut iterations = 0;

    while iterations < config.max_iters {
        if residual <= config.grad_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut reductions = 0;
        let (next, next_value) = loop {
            let candidate = projected_step(&params, &grads, step, radius)?;
            let moved = set_distance_sq(&params, &candidate);
            if moved == 0.0 {
                // Fixed point of the projected step: stationary.
                break (candidate, value);
            }
            let candidate_value = objective.value(&candidate)?;
            let required = value - config.armijo_c / step * moved + DECREASE_SLACK * value.abs();
            if candidate_value.is_finite() && candidate_value <= required {
                break (candidate, candidate_value);
            }
            if reductions == config.max_backtracks {
                return Err(Error::LineSearch { iteration: iterations, reductions, objective: value, step });
            }
            reductions += 1;
            step *= config.backtrack_factor;
        };

        let next_grads = objective.gradient(&next)?;
        let dx: Vec<SymMatrix> = next.iter().zip(&params).map(|(a, b)| a.sub(b)).collect();
        let dg: Vec<SymMatrix> = next_grads.iter().zip(&grads).map(|(a, b)| a.sub(b)).collect();
        let sy = set_inner(&dx, &dg);
        let ss = set_inner(&dx, &dx);
        step = if sy > 0.0 && ss > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            (step / config.backtrack_factor).min(1e12)
        };

        params = next;
        value = next_value;
        grads = next_grads;
        trajectory.push(value);
        residual = residual_from_grads(&params, &grads, config.residual_step, radius)?;
    }
    if !converged && residual <= config.grad_tolerance {
        converged = true;
    }

    let radius_active = match radius {
        Some(r) => params.iter().any(|p| linalg::frob_norm(p) >= r * (1.0 - 1e-9)),
        None => false,
    };
    let common_shift_curvature = objective::common_shift_curvature(data.dim() + 1, lambda, perturbation)?;
    Ok(TrainReport {
        params: ClassParams::new(params)?,
        objective_trajectory: trajectory,
        iterations,
        converged,
        stationarity_residual: residual,
        perturbation: perturbation.cloned(),
        common_shift_curvature,
        radius_active,
        elapsed: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_dataset;

    fn blobs() -> LabeledDataset {
        // Two tight clusters at ±(0.4, 0).
        let mut raw = Vec::new();
        let mut labels = Vec::new();
        for k in 0..20 {
            let t = k as f64 / 20.0 * std::f64::consts::TAU;
            let (dx, dy) = (0.03 * t.cos(), 0.03 * t.sin());
            raw.push(vec![0.4 + dx, dy]);
            labels.push(0);
            raw.push(vec![-0.4 + dx, dy]);
            labels.push(1);
        }
        normalize_dataset(&raw, labels, 2).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig { backtrack_factor: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig { max_iters: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig { param_radius: Some(-1.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn warm_start_is_psd_and_classifies_blobs() {
        let data = blobs();
        let init = initialize_params(&data).unwrap();
        assert!(init.min_eigenvalues().unwrap().iter().all(|&v| v >= -1e-9));
        assert!(model::accuracy(&init, &data).unwrap() >= 0.9);
    }

    #[test]
    fn singleton_classes_use_identity_fallback() {
        let data = normalize_dataset(&[vec![0.5, 0.0], vec![-0.5, 0.0]], vec![0, 1], 2).unwrap();
        let init = initialize_params(&data).unwrap();
        let view = model::to_gaussian_view(&init.as_slice()[0]).unwrap();
        assert!(view.inv_cov.max_abs_diff(&SymMatrix::identity(2)) < 1e-12);
        assert!((view.centroid[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trains_separable_blobs() {
        let data = blobs();
        let report = train(&data, 1.0, HuberLoss::default(), &OptimizerConfig::default(), None).unwrap();
        assert!(report.converged, "residual {}", report.stationarity_residual);
        assert!(model::accuracy(&report.params, &data).unwrap() >= 0.99);
        assert!(report.objective_trajectory.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn zero_perturbation_is_bitwise_unperturbed() {
        let data = blobs();
        let cfg = OptimizerConfig { max_iters: 200, ..Default::default() };
        let a = train(&data, 1.0, HuberLoss::default(), &cfg, None).unwrap();
        let b = train(&data, 1.0, HuberLoss::default(), &cfg, Some(&PerturbationMatrix::zeros(3))).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective_trajectory, b.objective_trajectory);
    }

    #[test]
    fn rejects_data_outside_the_ball() {
        let data = LabeledDataset::with_scale_factor(&[vec![2.0, 0.0], vec![0.0, 0.0]], vec![0, 1], 2, 1.0).unwrap();
        let err = train(&data, 1.0, HuberLoss::default(), &OptimizerConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)));
    }

    #[test]
    fn residual_in_the_interior_is_the_gradient_norm() {
        let data = blobs();
        let obj = Objective::new(&data, 1.0, HuberLoss::default(), None).unwrap();
        let params = vec![SymMatrix::identity(3).scale(2.0), SymMatrix::identity(3).scale(3.0)];
        let grads = obj.gradient(&params).unwrap();
        let norm = linalg::frob_norm_set(&grads);
        let r = stationarity_residual(&params, &obj, 1e-6, None).unwrap();
        assert!((r - norm).abs() <= 1e-8 * norm.max(1.0), "{r} vs {norm}");
    }
}
