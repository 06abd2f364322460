//! Classifier parametrization and the decision rule.
//!
//! A class is a PSD matrix `Φ_c` of size `(d+1)×(d+1)` packing the inverse covariance
//! `Ψ_c`, centroid `μ_c` and offset `θ_c` of a Gaussian ellipsoid:
//!
//! ```text
//! Φ_c = [  Ψ_c       -Ψ_c μ_c          ]
//!       [ -μ_cᵀ Ψ_c   μ_cᵀ Ψ_c μ_c + θ_c ]
//! ```
//!
//! With instances written in homogeneous form `x = (features, 1)` the Mahalanobis
//! distance plus offset becomes the quadratic form `xᵀ Φ_c x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};

/// Slack on the unit-ball check to absorb rounding in the global rescaling.
const UNIT_BALL_SLACK: f64 = 1e-12;

/// Numerical PSD tolerance for released parameters.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Smallest eigenvalue of `Ψ_c` for which the Gaussian view is defined.
pub const INVERTIBILITY_THRESHOLD: f64 = 1e-9;

/// Training instances in homogeneous coordinates with 0-based labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    dim: usize,
    num_classes: usize,
    instances: Vec<Vec<f64>>,
    labels: Vec<usize>,
    scale_factor: f64,
}

impl LabeledDataset {
    /// Validates already-homogeneous instances: trailing coordinate exactly 1, features
    /// inside the unit ball, every label below `num_classes` and every class present.
    pub fn new(instances: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize, scale_factor: f64) -> Result<Self> {
        let data = Self::build(instances, labels, num_classes, scale_factor)?;
        if let Some((i, norm)) =
            data.instances.iter().map(|x| feature_norm(x)).enumerate().find(|(_, n)| *n > 1.0 + UNIT_BALL_SLACK)
        {
            return Err(Error::InvalidData(format!("instance {i} has feature norm {norm} outside the unit ball")));
        }
        for c in 0..num_classes {
            if !data.labels.contains(&c) {
                return Err(Error::InvalidData(format!("class {} has no instances", c + 1)));
            }
        }
        Ok(data)
    }

    /// Held-out data scaled with a factor fixed elsewhere (normally the training set's).
    ///
    /// Neither the unit ball nor class coverage is enforced, so the result is suitable
    /// for evaluation but is rejected by the trainer if it leaves the ball.
    pub fn with_scale_factor(
        raw: &[Vec<f64>],
        labels: Vec<usize>,
        num_classes: usize,
        scale_factor: f64,
    ) -> Result<Self> {
        check_raw(raw)?;
        let instances = raw.iter().map(|r| homogenize(r, scale_factor)).collect();
        Self::build(instances, labels, num_classes, scale_factor)
    }

    fn build(instances: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize, scale_factor: f64) -> Result<Self> {
        if num_classes < 1 {
            return Err(Error::InvalidData("at least one class is required".into()));
        }
        if instances.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: instances.len(), found: labels.len() });
        }
        let Some(first) = instances.first() else {
            return Err(Error::InvalidData("dataset is empty".into()));
        };
        if first.len() < 2 {
            return Err(Error::InvalidData("instances need at least one feature".into()));
        }
        if !(scale_factor.is_finite() && scale_factor > 0.0) {
            return Err(Error::InvalidParameter(format!("scale factor {scale_factor} must be positive")));
        }
        let width = first.len();
        for (i, x) in instances.iter().enumerate() {
            if x.len() != width {
                return Err(Error::DimensionMismatch { expected: width, found: x.len() });
            }
            if x[width - 1] != 1.0 {
                return Err(Error::InvalidData(format!("instance {i} is not homogeneous")));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("instance {i} has a non-finite feature")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidData(format!("label {} outside 1..={num_classes}", bad + 1)));
        }
        Ok(LabeledDataset { dim: width - 1, num_classes, instances, labels, scale_factor })
    }

    /// Feature dimension `d` (instances have `d+1` entries).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn instances(&self) -> &[Vec<f64>] {
        &self.instances
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn instance(&self, i: usize) -> &[f64] {
        &self.instances[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.instances.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    pub fn max_feature_norm(&self) -> f64 {
        self.instances.iter().map(|x| feature_norm(x)).fold(0.0, f64::max)
    }

    pub fn in_unit_ball(&self) -> bool {
        self.max_feature_norm() <= 1.0 + UNIT_BALL_SLACK
    }

    /// Copy with instance `index` replaced; the replacement must be homogeneous.
    pub(crate) fn replaced(&self, index: usize, instance: Vec<f64>, label: usize) -> Self {
        let mut out = self.clone();
        out.instances[index] = instance;
        out.labels[index] = label;
        out
    }
}

fn feature_norm(x: &[f64]) -> f64 {
    x[..x.len() - 1].iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_raw(raw: &[Vec<f64>]) -> Result<()> {
    for (i, row) in raw.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("row {i} has a NaN or infinite feature")));
        }
    }
    Ok(())
}

/// `(scale * features, 1)`.
pub fn homogenize(features: &[f64], scale: f64) -> Vec<f64> {
    let mut x: Vec<f64> = features.iter().map(|v| v * scale).collect();
    x.push(1.0);
    x
}

/// Scales raw features into the unit ball with one global factor and appends the
/// homogeneous coordinate. The factor is `1 / max_i ‖row_i‖` when that maximum
/// exceeds 1 and `1` otherwise.
pub fn normalize_dataset(raw: &[Vec<f64>], labels: Vec<usize>, num_classes: usize) -> Result<LabeledDataset> {
    if raw.is_empty() {
        return Err(Error::InvalidData("dataset is empty".into()));
    }
    check_raw(raw)?;
    let max_norm = raw.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let scale = if max_norm > 1.0 { 1.0 / max_norm } else { 1.0 };
    let instances = raw.iter().map(|r| homogenize(r, scale)).collect();
    LabeledDataset::new(instances, labels, num_classes, scale)
}

/// The classifier: one PSD matrix per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    matrices: Vec<SymMatrix>,
}

impl ClassParams {
    /// Checks shapes and that every matrix is PSD within [`PSD_TOLERANCE`].
    pub fn new(matrices: Vec<SymMatrix>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return Err(Error::InvalidParameter("at least one class matrix is required".into()));
        };
        let dim = first.dim();
        if dim < 2 {
            return Err(Error::InvalidParameter("class matrices must be at least 2x2".into()));
        }
        for (c, m) in matrices.iter().enumerate() {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.dim() });
            }
            let min = linalg::min_eigenvalue(m)?;
            if min < -PSD_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "class {} matrix is not PSD (smallest eigenvalue {min:e})",
                    c + 1
                )));
            }
        }
        Ok(ClassParams { matrices })
    }

    pub fn as_slice(&self) -> &[SymMatrix] {
        &self.matrices
    }

    pub fn into_inner(self) -> Vec<SymMatrix> {
        self.matrices
    }

    pub fn num_classes(&self) -> usize {
        self.matrices.len()
    }

    /// `d + 1`.
    pub fn matrix_dim(&self) -> usize {
        self.matrices[0].dim()
    }

    /// `d`.
    pub fn feature_dim(&self) -> usize {
        self.matrix_dim() - 1
    }

    pub fn min_eigenvalues(&self) -> Result<Vec<f64>> {
        self.matrices.iter().map(linalg::min_eigenvalue).collect()
    }
}

/// `xᵀ Φ_c x`.
pub fn score(phi: &SymMatrix, x: &[f64]) -> Result<f64> {
    if x.len() != phi.dim() {
        return Err(Error::DimensionMismatch { expected: phi.dim(), found: x.len() });
    }
    Ok(phi.quad_form(x))
}

/// Class with the smallest score; ties go to the lowest class index.
pub fn predict(params: &ClassParams, x: &[f64]) -> Result<usize> {
    predict_with(params.as_slice(), x)
}

pub(crate) fn predict_with(matrices: &[SymMatrix], x: &[f64]) -> Result<usize> {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (c, phi) in matrices.iter().enumerate() {
        let s = score(phi, x)?;
        if s < best_score {
            best = c;
            best_score = s;
        }
    }
    Ok(best)
}

/// Fraction of instances classified correctly.
pub fn accuracy(params: &ClassParams, data: &LabeledDataset) -> Result<f64> {
    let mut correct = 0usize;
    for (x, y) in data.iter() {
        if predict(params, x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Per-class `(μ_c, Ψ_c, θ_c)` decomposition of one `Φ_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianView {
    pub centroid: Vec<f64>,
    pub inv_cov: SymMatrix,
    pub offset: f64,
}

/// Recovers centroid, inverse covariance and offset from the block form.
///
/// Fails with [`Error::NotInvertible`] when `Ψ_c` is (numerically) singular; the matrix
/// form stays usable for prediction in that case.
pub fn to_gaussian_view(phi: &SymMatrix) -> Result<GaussianView> {
    let n = phi.dim();
    if n < 2 {
        return Err(Error::InvalidParameter("class matrix must be at least 2x2".into()));
    }
    let d = n - 1;
    let inv_cov = SymMatrix::from_fn(d, |i, j| phi.get(i, j));
    let eig = linalg::sym_eigen(&inv_cov)?;
    if eig.min_value() <= INVERTIBILITY_THRESHOLD {
        return Err(Error::NotInvertible { min_eigenvalue: eig.min_value() });
    }
    // μ = -Ψ⁻¹ r where r is the upper-right column block.
    let r: Vec<f64> = (0..d).map(|i| phi.get(i, d)).collect();
    let mut centroid = vec![0.0; d];
    for k in 0..d {
        let vk = eig.vector(k);
        let coef = vk.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / eig.values[k];
        for i in 0..d {
            centroid[i] -= coef * vk[i];
        }
    }
    let offset = phi.get(d, d) - inv_cov.quad_form(&centroid);
    Ok(GaussianView { centroid, inv_cov, offset })
}

/// Assembles the block matrix; requires `Ψ` PSD and `θ ≥ 0`.
pub fn from_gaussian_view(view: &GaussianView) -> Result<SymMatrix> {
    let d = view.inv_cov.dim();
    if view.centroid.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: view.centroid.len() });
    }
    if view.offset.is_nan() || view.offset < 0.0 {
        return Err(Error::InvalidParameter(format!("offset {} must be non-negative", view.offset)));
    }
    let psi = &view.inv_cov;
    if linalg::min_eigenvalue(psi)? < -PSD_TOLERANCE {
        return Err(Error::InvalidParameter("inverse covariance is not PSD".into()));
    }
    let psi_mu: Vec<f64> = (0..d).map(|i| (0..d).map(|j| psi.get(i, j) * view.centroid[j]).sum()).collect();
    let corner = psi.quad_form(&view.centroid) + view.offset;
    let phi = SymMatrix::from_fn(d + 1, |i, j| match (i < d, j < d) {
        (true, true) => psi.get(i, j),
        (true, false) => -psi_mu[i],
        (false, true) => -psi_mu[j],
        (false, false) => corner,
    });
    let min = linalg::min_eigenvalue(&phi)?;
    if min < -PSD_TOLERANCE * linalg::frob_norm(&phi).max(1.0) {
        return Err(Error::NonFinite(format!("assembled class matrix lost PSD-ness ({min:e})")));
    }
    Ok(phi)
}
