//! Slow, independent reference computations for checking `lmgc`.
//!
//! Nothing here calls the library's own loss, objective or gradient code. Each quantity
//! is recomputed with plain loops from its definition so that agreement means something.

use lmgc::linalg::SymMatrix;
use lmgc::privacy::PerturbationMatrix;
use lmgc::LabeledDataset;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("function is not finite at {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Central finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FDSpec {
    pub step: f64,
}

impl Default for FDSpec {
    fn default() -> Self {
        FDSpec { step: 1e-6 }
    }
}

/// Gradient of `f` with respect to symmetric matrices, by central differences.
///
/// An off-diagonal entry is moved together with its mirror, which changes `f` by twice
/// the symmetric gradient entry; the quotient is halved accordingly.
pub fn fd_gradient<F>(f: F, params: &[SymMatrix], spec: FDSpec) -> Result<Vec<SymMatrix>>
where
    F: Fn(&[SymMatrix]) -> f64,
{
    if !(spec.step.is_finite() && spec.step > 0.0) {
        return Err(OracleError::InvalidInput(format!("step must be positive, got {}", spec.step)));
    }
    let t = spec.step;
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for c in 0..params.len() {
        let n = params[c].dim();
        let mut g = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let orig = params[c].get(i, j);
                work[c].set_sym(i, j, orig + t);
                let up = f(&work);
                work[c].set_sym(i, j, orig - t);
                let down = f(&work);
                work[c].set_sym(i, j, orig);
                if !(up.is_finite() && down.is_finite()) {
                    return Err(OracleError::NonFinite(format!("class {c}, entry ({i}, {j})")));
                }
                let mut d = (up - down) / (2.0 * t);
                if i != j {
                    d /= 2.0;
                }
                g.set_sym(i, j, d);
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest entrywise relative error, `|a − b| / max(1, |b|)`, over two matrix lists.
pub fn max_rel_error(analytic: &[SymMatrix], reference: &[SymMatrix]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()))
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Gamma(shape, scale) CDF via the regularized lower incomplete gamma function.
pub fn gamma_cdf(x: f64, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
        return Err(OracleError::InvalidInput(format!("shape {shape} and scale {scale} must be positive")));
    }
    if x.is_nan() || x < 0.0 {
        return Err(OracleError::InvalidInput(format!("x must be non-negative, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(statrs::function::gamma::gamma_lr(shape, x / scale).clamp(0.0, 1.0))
}

/// Kolmogorov–Smirnov statistic `sup |F_n − F|`.
pub fn ks_statistic<F>(samples: &[f64], cdf: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if samples.len() < 10 {
        return Err(OracleError::InvalidInput(format!("need at least 10 samples, got {}", samples.len())));
    }
    if samples.iter().any(|s| s.is_nan()) {
        return Err(OracleError::InvalidInput("samples contain NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Asymptotic one-sample KS critical value at level `alpha`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// `xᵀ Φ x` by a double loop.
pub fn naive_score(phi: &SymMatrix, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            s += x[i] * phi.get(i, j) * x[j];
        }
    }
    s
}

/// Class with the smallest score, lowest index on ties.
pub fn naive_predict(params: &[SymMatrix], x: &[f64]) -> usize {
    let mut best = 0;
    for c in 1..params.len() {
        if naive_score(&params[c], x) < naive_score(&params[best], x) {
            best = c;
        }
    }
    best
}

/// Huber smoothing of the hinge at zero with half-width `h`.
pub fn naive_huber(m: f64, h: f64) -> f64 {
    if m >= h {
        0.0
    } else if m <= -h {
        -m
    } else {
        (h - m) * (h - m) / (4.0 * h)
    }
}

/// Sum over instances and competing classes of the Huber loss of the shifted margin.
pub fn naive_empirical_loss(params: &[SymMatrix], data: &LabeledDataset, h: f64, margin_target: f64) -> f64 {
    let mut total = 0.0;
    for (x, y) in data.iter() {
        for c in 0..params.len() {
            if c != y {
                let m = naive_score(&params[c], x) - naive_score(&params[y], x);
                total += naive_huber(m - margin_target, h);
            }
        }
    }
    total
}

/// Sum of `max(0, 1 + score_y − score_c)` over instances and competing classes.
pub fn naive_hinge(params: &[SymMatrix], data: &LabeledDataset) -> f64 {
    let mut total = 0.0;
    for (x, y) in data.iter() {
        for c in 0..params.len() {
            if c != y {
                total += (1.0 + naive_score(&params[y], x) - naive_score(&params[c], x)).max(0.0);
            }
        }
    }
    total
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// `λ Σ_c trace(I_Φ Φ_c I_Φ)` with the truncated identity built and multiplied explicitly.
pub fn naive_regularizer(params: &[SymMatrix], lambda: f64) -> f64 {
    let mut total = 0.0;
    for phi in params {
        let n = phi.dim();
        let truncated: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| if i == j && i + 1 < n { 1.0 } else { 0.0 }).collect()).collect();
        let prod = matmul(&matmul(&truncated, &phi.to_rows()), &truncated);
        total += (0..n).map(|i| prod[i][i]).sum::<f64>();
    }
    lambda * total
}

/// `Σ_c Σ_ij b_ij Φ_c,ij`.
pub fn naive_perturbation_term(params: &[SymMatrix], b: &PerturbationMatrix) -> f64 {
    let mut total = 0.0;
    for phi in params {
        for i in 0..phi.dim() {
            for j in 0..phi.dim() {
                total += b.get(i, j) * phi.get(i, j);
            }
        }
    }
    total
}

/// `J` or `J_p` assembled from the naive pieces.
pub fn naive_objective(
    params: &[SymMatrix],
    data: &LabeledDataset,
    lambda: f64,
    h: f64,
    margin_target: f64,
    b: Option<&PerturbationMatrix>,
) -> f64 {
    naive_empirical_loss(params, data, h, margin_target)
        + naive_regularizer(params, lambda)
        + b.map_or(0.0, |b| naive_perturbation_term(params, b))
}

/// Symmetric matrix with independent uniform(−scale, scale) entries.
pub fn random_sym<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> SymMatrix {
    let mut m = SymMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            m.set_sym(i, j, rng.random_range(-scale..scale));
        }
    }
    m
}

/// Random PSD matrix `G Gᵀ / dim` with uniform(−scale, scale) entries in `G`.
pub fn random_psd<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> SymMatrix {
    let mut m = SymMatrix::zeros(dim);
    for _ in 0..dim {
        let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-scale..scale)).collect();
        m.add_outer(1.0 / dim as f64, &g);
    }
    m
}

/// Homogeneous instance `(x, 1)` with `x` uniform in the unit ball of dimension `d`.
pub fn random_ball_instance<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            let mut z = x;
            z.push(1.0);
            return z;
        }
    }
}

/// Randomized check of the projection variational inequality
/// `⟨m − p, z − p⟩ ≤ 0` over feasible points `z` drawn by `feasible`.
/// Returns the largest value seen, normalized by `‖m − p‖ ‖z − p‖`.
pub fn projection_probe<R, G>(m: &SymMatrix, projected: &SymMatrix, trials: usize, rng: &mut R, mut feasible: G) -> f64
where
    R: Rng + ?Sized,
    G: FnMut(&mut R) -> SymMatrix,
{
    let residual = m.sub(projected);
    let rn = residual.inner(&residual).sqrt();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let z = feasible(rng);
        let dz = z.sub(projected);
        let scale = rn * dz.inner(&dz).sqrt();
        let v = if scale > 0.0 { residual.inner(&dz) / scale } else { 0.0 };
        worst = worst.max(v);
    }
    worst
}
