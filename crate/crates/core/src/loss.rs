//! Huber surrogate of the multiclass hinge loss.
//!
//! For an instance `x` with label `y` and a competing class `c`, the margin is
//! `m = xᵀ(Φ_c − Φ_y)x`. The loss term is the Huber function of `m − target`, where
//! `target` (default 1) is the margin the hinge loss asks for. With `target = 0` this is
//! the Huber function of the raw margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::model::LabeledDataset;

pub const DEFAULT_HUBER_H: f64 = 0.5;
pub const DEFAULT_MARGIN_TARGET: f64 = 1.0;

/// Huber transition width `h` and the margin target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberLoss {
    pub h: f64,
    pub margin_target: f64,
}

impl Default for HuberLoss {
    fn default() -> Self {
        HuberLoss { h: DEFAULT_HUBER_H, margin_target: DEFAULT_MARGIN_TARGET }
    }
}

impl HuberLoss {
    pub fn new(h: f64, margin_target: f64) -> Result<Self> {
        let loss = HuberLoss { h, margin_target };
        loss.validate()?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::InvalidParameter(format!("huber h must be positive, got {}", self.h)));
        }
        if !(self.margin_target.is_finite() && self.margin_target >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "margin target must be non-negative, got {}",
                self.margin_target
            )));
        }
        Ok(())
    }

    /// Loss of one `(i, c)` term given the raw margin.
    #[inline]
    pub fn value(&self, margin: f64) -> f64 {
        huber_loss(margin - self.margin_target, self.h)
    }

    /// Derivative of [`Self::value`] with respect to the raw margin.
    #[inline]
    pub fn slope(&self, margin: f64) -> f64 {
        huber_slope(margin - self.margin_target, self.h)
    }
}

/// Piecewise Huber function: `0` for `m > h`, `(h − m)²/(4h)` for `|m| ≤ h`,
/// `−m` for `m < −h`.
#[inline]
pub fn huber_loss(m: f64, h: f64) -> f64 {
    if m > h {
        0.0
    } else if m >= -h {
        (h - m) * (h - m) / (4.0 * h)
    } else {
        -m
    }
}

/// `d/dm` of [`huber_loss`]; lies in `[-1, 0]`.
#[inline]
pub fn huber_slope(m: f64, h: f64) -> f64 {
    if m > h {
        0.0
    } else if m >= -h {
        -(h - m) / (2.0 * h)
    } else {
        -1.0
    }
}

fn check_shapes(params: &[SymMatrix], data: &LabeledDataset) -> Result<()> {
    if params.len() != data.num_classes() {
        return Err(Error::DimensionMismatch { expected: data.num_classes(), found: params.len() });
    }
    for phi in params {
        if phi.dim() != data.dim() + 1 {
            return Err(Error::DimensionMismatch { expected: data.dim() + 1, found: phi.dim() });
        }
    }
    Ok(())
}

/// `xᵀ Φ_c x − xᵀ Φ_y x`.
pub fn margin(params: &[SymMatrix], x: &[f64], y: usize, c: usize) -> Result<f64> {
    if c == y {
        return Err(Error::InvalidParameter("margin is undefined for the true class".into()));
    }
    if y >= params.len() || c >= params.len() {
        return Err(Error::InvalidParameter(format!("class index out of range ({y}, {c})")));
    }
    let c_score = crate::model::score(&params[c], x)?;
    let y_score = crate::model::score(&params[y], x)?;
    Ok(c_score - y_score)
}

/// Gradient of one `(i, c)` loss term with respect to `Φ_c`: `ℓ'(m)·x xᵀ`.
///
/// The gradient with respect to `Φ_y` is the negation. Its Frobenius norm is
/// `|ℓ'|·‖x‖² ≤ ‖x‖²`.
pub fn huber_grad_contrib(x: &[f64], y: usize, c: usize, params: &[SymMatrix], loss: &HuberLoss) -> Result<SymMatrix> {
    let m = margin(params, x, y, c)?;
    Ok(SymMatrix::outer(x).scale(loss.slope(m)))
}

/// Loss of a single instance summed over competing classes.
pub fn instance_loss(params: &[SymMatrix], x: &[f64], y: usize, loss: &HuberLoss) -> f64 {
    let y_score = params[y].quad_form(x);
    params.iter().enumerate().filter(|&(c, _)| c != y).map(|(_, phi)| loss.value(phi.quad_form(x) - y_score)).sum()
}

/// Per-class gradient of [`instance_loss`].
pub fn instance_loss_grad(params: &[SymMatrix], x: &[f64], y: usize, loss: &HuberLoss) -> Vec<SymMatrix> {
    let dim = params[0].dim();
    let mut grads = vec![SymMatrix::zeros(dim); params.len()];
    accumulate_instance_grad(&mut grads, params, x, y, loss);
    grads
}

fn accumulate_instance_grad(grads: &mut [SymMatrix], params: &[SymMatrix], x: &[f64], y: usize, loss: &HuberLoss) {
    let y_score = params[y].quad_form(x);
    let mut y_coef = 0.0;
    for (c, phi) in params.iter().enumerate() {
        if c == y {
            continue;
        }
        let slope = loss.slope(phi.quad_form(x) - y_score);
        if slope != 0.0 {
            grads[c].add_outer(slope, x);
            y_coef -= slope;
        }
    }
    if y_coef != 0.0 {
        grads[y].add_outer(y_coef, x);
    }
}

/// `L(Φ) = Σ_i Σ_{c≠y_i} ℓ(m_ic)`.
pub fn empirical_loss(params: &[SymMatrix], data: &LabeledDataset, loss: &HuberLoss) -> Result<f64> {
    check_shapes(params, data)?;
    Ok(data.iter().map(|(x, y)| instance_loss(params, x, y, loss)).sum())
}

/// Per-class gradient of [`empirical_loss`], accumulated in instance order.
pub fn empirical_loss_grad(params: &[SymMatrix], data: &LabeledDataset, loss: &HuberLoss) -> Result<Vec<SymMatrix>> {
    check_shapes(params, data)?;
    let mut grads = vec![SymMatrix::zeros(data.dim() + 1); params.len()];
    for (x, y) in data.iter() {
        accumulate_instance_grad(&mut grads, params, x, y, loss);
    }
    Ok(grads)
}

/// Reference multiclass hinge loss `Σ_i Σ_{c≠y_i} [1 + xᵀ(Φ_y − Φ_c)x]_+`.
pub fn hinge_loss_total(params: &[SymMatrix], data: &LabeledDataset) -> Result<f64> {
    check_shapes(params, data)?;
    let mut total = 0.0;
    for (x, y) in data.iter() {
        let y_score = params[y].quad_form(x);
        for (c, phi) in params.iter().enumerate() {
            if c != y {
                total += (1.0 + y_score - phi.quad_form(x)).max(0.0);
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_dataset;
    use proptest::prelude::*;

    const RAW: HuberLoss = HuberLoss { h: 0.5, margin_target: 0.0 };

    #[test]
    fn branch_values() {
        let h = 0.5;
        assert_eq!(huber_loss(h, h), 0.0);
        assert_eq!(huber_loss(-h, h), h);
        assert_eq!(huber_loss(0.0, 0.5), 0.125);
        assert_eq!(huber_loss(-2.0, 0.5), 2.0);
        assert_eq!(huber_loss(3.0, 0.5), 0.0);
    }

    #[test]
    fn branches_meet_continuously() {
        for h in [0.01, 0.5, 2.0] {
            let below = |v: f64| v - 1e-13;
            let above = |v: f64| v + 1e-13;
            assert!((huber_loss(above(h), h) - huber_loss(below(h), h)).abs() <= 1e-12);
            assert!((huber_loss(above(-h), h) - huber_loss(below(-h), h)).abs() <= 1e-12);
            assert!((huber_slope(above(h), h) - huber_slope(below(h), h)).abs() <= 1e-10);
            assert!((huber_slope(above(-h), h) - huber_slope(below(-h), h)).abs() <= 1e-10);
        }
    }

    #[test]
    fn loss_parameters_are_validated() {
        assert!(HuberLoss::new(0.0, 1.0).is_err());
        assert!(HuberLoss::new(0.5, -1.0).is_err());
        assert!(HuberLoss::new(0.5, 0.0).is_ok());
    }

    #[test]
    fn margin_examples() {
        let x = [0.0, 0.0, 1.0];
        let same = vec![SymMatrix::identity(3), SymMatrix::identity(3)];
        assert_eq!(margin(&same, &x, 0, 1).unwrap(), 0.0);
        let params = vec![SymMatrix::zeros(3), SymMatrix::identity(3)];
        assert_eq!(margin(&params, &x, 0, 1).unwrap(), 1.0);
        assert!(margin(&params, &x, 1, 1).is_err());
    }

    #[test]
    fn grad_contrib_branches() {
        let x = [0.3, -0.4, 1.0];
        // margin = 3 * |x|^2 > h
        let flat = vec![SymMatrix::zeros(3), SymMatrix::identity(3).scale(3.0)];
        assert_eq!(huber_grad_contrib(&x, 0, 1, &flat, &RAW).unwrap(), SymMatrix::zeros(3));
        // margin = -3 * |x|^2 < -h: linear branch, gradient wrt Φ_c is -x xᵀ
        let linear = vec![SymMatrix::identity(3).scale(3.0), SymMatrix::zeros(3)];
        let g = huber_grad_contrib(&x, 0, 1, &linear, &RAW).unwrap();
        assert_eq!(g, SymMatrix::outer(&x).scale(-1.0));
        let norm = crate::linalg::frob_norm(&g);
        let sq_norm: f64 = x.iter().map(|v| v * v).sum();
        assert!((norm - sq_norm).abs() < 1e-15);
    }

    #[test]
    fn single_instance_two_classes_mirror() {
        let params = vec![SymMatrix::from_diagonal(&[0.1, 0.2, 0.3]), SymMatrix::from_diagonal(&[0.2, 0.1, 0.4])];
        let x = [0.2, 0.1, 1.0];
        let g = instance_loss_grad(&params, &x, 0, &HuberLoss::default());
        assert!(g[0].add(&g[1]).max_abs_diff(&SymMatrix::zeros(3)) == 0.0);
        let m = margin(&params, &x, 0, 1).unwrap();
        assert_eq!(instance_loss(&params, &x, 0, &HuberLoss::default()), HuberLoss::default().value(m));
    }

    #[test]
    fn zero_loss_region() {
        let data = normalize_dataset(&[vec![0.5, 0.0], vec![-0.5, 0.0]], vec![0, 1], 2).unwrap();
        // class 0 centred at +0.5, class 1 at -0.5, steep enough for margins > 1.5
        let psi = 20.0;
        let phi = |mu: f64| {
            crate::model::from_gaussian_view(&crate::model::GaussianView {
                centroid: vec![mu, 0.0],
                inv_cov: SymMatrix::identity(2).scale(psi),
                offset: 0.0,
            })
            .unwrap()
        };
        let params = vec![phi(0.5), phi(-0.5)];
        let loss = HuberLoss::default();
        assert_eq!(empirical_loss(&params, &data, &loss).unwrap(), 0.0);
        assert!(empirical_loss_grad(&params, &data, &loss).unwrap().iter().all(|g| *g == SymMatrix::zeros(3)));
        assert_eq!(hinge_loss_total(&params, &data).unwrap(), 0.0);
    }

    #[test]
    fn hinge_at_zero_params() {
        let data = normalize_dataset(&[vec![0.5, 0.0], vec![-0.5, 0.0], vec![0.0, 0.5]], vec![0, 1, 2], 3).unwrap();
        let params = vec![SymMatrix::zeros(3); 3];
        assert_eq!(hinge_loss_total(&params, &data).unwrap(), 3.0 * 2.0);
    }

    #[test]
    fn shape_errors() {
        let data = normalize_dataset(&[vec![0.5, 0.0], vec![-0.5, 0.0]], vec![0, 1], 2).unwrap();
        let loss = HuberLoss::default();
        assert!(empirical_loss(&[SymMatrix::zeros(3)], &data, &loss).is_err());
        assert!(empirical_loss(&[SymMatrix::zeros(2), SymMatrix::zeros(2)], &data, &loss).is_err());
    }

    proptest! {
        #[test]
        fn single_instance_gradient_is_bounded(
            entries in prop::collection::vec(-5.0f64..5.0, 3 * 9),
            dir in prop::collection::vec(-1.0f64..1.0, 2),
            radius in 0.0f64..1.0,
            y in 0usize..3,
            h in 0.05f64..2.0,
        ) {
            let params: Vec<SymMatrix> = entries
                .chunks(9)
                .map(|c| SymMatrix::from_row_major(3, c.to_vec()).unwrap())
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let features: Vec<f64> = dir.iter().map(|v| v / norm * radius).collect();
            let x = crate::model::homogenize(&features, 1.0);
            let loss = HuberLoss { h, margin_target: 1.0 };
            for c in 0..3 {
                if c == y { continue; }
                let g = huber_grad_contrib(&x, y, c, &params, &loss).unwrap();
                let sq: f64 = x.iter().map(|v| v * v).sum();
                prop_assert!(crate::linalg::frob_norm(&g) <= sq + 1e-12);
            }
        }
    }
}
