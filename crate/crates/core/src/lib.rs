//! Multiclass large-margin Gaussian classifiers with ε-differential privacy.
//!
//! Each class `c` is a positive-semidefinite `(d+1)×(d+1)` matrix `Φ_c` acting on
//! homogeneous instances `x = (features, 1)`; an instance goes to the class with the
//! smallest `xᵀ Φ_c x`. Training minimizes a Huber surrogate of the multiclass hinge
//! loss plus a trace regularizer on the inverse-covariance blocks. The private variant
//! adds a linear term `Σ_c ⟨b, Φ_c⟩` with one random matrix `b` whose density is
//! proportional to `exp(-ε‖b‖_F / 2)`.
//!
//! Module map:
//!
//! - [`linalg`]: dense symmetric matrices, Jacobi eigensolver, PSD projection.
//! - [`model`]: datasets, classifier parameters, decision rule, Gaussian view.
//! - [`loss`]: Huber and hinge losses and the loss gradient.
//! - [`objective`]: regularizer, objective, perturbed objective and gradients.
//! - [`privacy`]: perturbation sampler and excess-risk bound calculators.
//! - [`optimizer`]: projected gradient descent over the PSD cone.
//! - [`experiments`]: synthetic data, adjacent datasets, ε sweeps.
//! - [`io`]: model JSON and dataset CSV formats.

pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod privacy;

pub use error::{Error, Result};
pub use linalg::SymMatrix;
pub use loss::HuberLoss;
pub use model::{ClassParams, GaussianView, LabeledDataset};
pub use objective::Objective;
pub use optimizer::{OptimizerConfig, TrainReport};
pub use privacy::PerturbationMatrix;
