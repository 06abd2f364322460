//! Synthetic data, adjacent datasets and the privacy/utility ε sweep.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::HuberLoss;
use crate::model::{self, LabeledDataset};
use crate::objective;
use crate::optimizer::{self, OptimizerConfig};
use crate::privacy;

/// Header of the sweep CSV.
pub const SWEEP_CSV_HEADER: [&str; 8] =
    ["epsilon", "trial", "J_perturbed", "J_unperturbed", "excess", "bound", "acc_perturbed", "acc_unperturbed"];

/// Held-out set size relative to the training set.
pub const TEST_SET_FACTOR: usize = 10;

/// Copy of `data` with instance `index` substituted. The replacement is a homogeneous
/// instance whose features lie in the unit ball.
pub fn make_adjacent(
    data: &LabeledDataset,
    index: usize,
    new_instance: &[f64],
    new_label: usize,
) -> Result<LabeledDataset> {
    if index >= data.len() {
        return Err(Error::InvalidParameter(format!("index {index} out of range for {} instances", data.len())));
    }
    if new_instance.len() != data.dim() + 1 {
        return Err(Error::DimensionMismatch { expected: data.dim() + 1, found: new_instance.len() });
    }
    if new_label >= data.num_classes() {
        return Err(Error::InvalidData(format!("label {} outside 1..={}", new_label + 1, data.num_classes())));
    }
    let adjacent = data.replaced(index, new_instance.to_vec(), new_label);
    LabeledDataset::new(
        adjacent.instances().to_vec(),
        adjacent.labels().to_vec(),
        adjacent.num_classes(),
        adjacent.scale_factor(),
    )
}

/// Balanced isotropic Gaussian classes with means on a circle of radius `separation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub separation: f64,
    /// Per-coordinate standard deviation before normalization.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    pub seed: u64,
}

fn default_noise_std() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn new(n: usize, d: usize, classes: usize, separation: f64, seed: u64) -> Self {
        SynthSpec { n, d, classes, separation, noise_std: 1.0, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.d < 1 || self.classes < 1 {
            return Err(Error::InvalidParameter("dimension and class count must be positive".into()));
        }
        if self.n < self.classes {
            return Err(Error::InvalidParameter(format!("need n >= C, got n={} C={}", self.n, self.classes)));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidParameter("separation must be non-negative".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidParameter("noise_std must be non-negative".into()));
        }
        Ok(())
    }

    /// Direction of the class-`c` mean.
    fn mean_direction(&self, c: usize) -> Vec<f64> {
        let mut u = vec![0.0; self.d];
        if self.d == 1 {
            u[0] = if self.classes == 1 { 0.0 } else { -1.0 + 2.0 * c as f64 / (self.classes - 1) as f64 };
        } else {
            let angle = std::f64::consts::TAU * c as f64 / self.classes as f64;
            u[0] = angle.cos();
            u[1] = angle.sin();
        }
        u
    }

    /// `n` raw (unnormalized) rows with labels `i mod C`.
    pub fn sample_raw(&self, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<Vec<f64>> = (0..self.classes)
            .map(|c| self.mean_direction(c).into_iter().map(|v| v * self.separation).collect())
            .collect();
        let mut raw = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.classes;
            let row = means[c]
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + self.noise_std * z
                })
                .collect();
            raw.push(row);
            labels.push(c);
        }
        (raw, labels)
    }

    /// Training set normalized into the unit ball.
    pub fn generate(&self) -> Result<LabeledDataset> {
        self.validate()?;
        let (raw, labels) = self.sample_raw(self.n, self.seed);
        model::normalize_dataset(&raw, labels, self.classes)
    }

    /// Training set plus a held-out set [`TEST_SET_FACTOR`] times larger, drawn from an
    /// independent stream and scaled with the training factor.
    pub fn generate_with_test(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let train = self.generate()?;
        let (raw, labels) = self.sample_raw(self.n * TEST_SET_FACTOR, mix_seed(self.seed, u64::MAX));
        let test = LabeledDataset::with_scale_factor(&raw, labels, self.classes, train.scale_factor())?;
        Ok((train, test))
    }
}

pub fn synth_gaussian_data(n: usize, d: usize, classes: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    SynthSpec::new(n, d, classes, separation, seed).generate()
}

/// Independent stream seed for `(master, index)` (SplitMix64 finalizer).
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub data: SynthSpec,
    pub lambda: f64,
    #[serde(default)]
    pub loss: HuberLoss,
    pub delta: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Master seed for the perturbation draws.
    pub seed: u64,
}

impl SweepSpec {
    fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::InvalidParameter("epsilon grid is empty".into()));
        }
        if self.epsilons.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::InvalidParameter("every epsilon must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        objective::check_lambda(self.lambda)?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        privacy::PrivacyBudget::new(self.epsilons[0], self.delta)?;
        self.data.validate()
    }
}

/// One `(ε, trial)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub epsilon: f64,
    pub trial: usize,
    pub j_perturbed: f64,
    pub j_unperturbed: f64,
    pub excess: f64,
    pub bound: f64,
    pub acc_perturbed: f64,
    pub acc_unperturbed: f64,
    pub noise_norm: f64,
    pub converged: bool,
    pub radius_active: bool,
    /// Training failure for this cell; numeric fields are NaN when set.
    pub error: Option<String>,
}

/// Aggregates over the trials of one ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub mean_excess: f64,
    pub median_excess: f64,
    pub q90_excess: f64,
    pub bound: f64,
    pub true_risk_bound: f64,
    pub mean_acc_perturbed: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub summaries: Vec<EpsilonSummary>,
    pub j_unperturbed: f64,
    pub acc_unperturbed: f64,
    pub unperturbed_converged: bool,
}

impl SweepResult {
    /// Fraction of successful cells whose excess is within the bound.
    pub fn fraction_within_bound(&self) -> f64 {
        let ok: Vec<&SweepCell> = self.cells.iter().filter(|c| c.error.is_none()).collect();
        if ok.is_empty() {
            return 0.0;
        }
        ok.iter().filter(|c| c.excess <= c.bound).count() as f64 / ok.len() as f64
    }

    /// Spearman rank correlation between ε and the mean excess per ε.
    pub fn excess_epsilon_spearman(&self) -> f64 {
        let eps: Vec<f64> = self.summaries.iter().map(|s| s.epsilon).collect();
        let ex: Vec<f64> = self.summaries.iter().map(|s| s.mean_excess).collect();
        spearman(&eps, &ex)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SWEEP_CSV_HEADER)?;
        for c in &self.cells {
            w.write_record(&[
                c.epsilon.to_string(),
                c.trial.to_string(),
                c.j_perturbed.to_string(),
                c.j_unperturbed.to_string(),
                c.excess.to_string(),
                c.bound.to_string(),
                c.acc_perturbed.to_string(),
                c.acc_unperturbed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains the unperturbed classifier once, then one perturbed classifier per cell with a
/// fresh `b`. Cell failures are recorded in the cell; only setup failures are returned.
pub fn run_epsilon_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let (train, test) = spec.data.generate_with_test()?;
    let reference = optimizer::train(&train, spec.lambda, spec.loss, &spec.optimizer, None)?;
    let j_star = objective::objective_j(reference.params.as_slice(), &train, spec.lambda, &spec.loss)?;
    let acc_star = model::accuracy(&reference.params, &test)?;

    let grid: Vec<(usize, f64, usize)> =
        spec.epsilons.iter().enumerate().flat_map(|(e, &eps)| (0..spec.trials).map(move |t| (e, eps, t))).collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(e, eps, trial)| {
            let cell_index = (e * spec.trials + trial) as u64;
            let seed = mix_seed(spec.seed, cell_index);
            let bound = privacy::empirical_risk_bound(train.dim(), train.num_classes(), eps, spec.lambda, spec.delta)
                .unwrap_or(f64::NAN);
            let outcome = (|| -> Result<SweepCell> {
                let b = privacy::sample_perturbation_seeded(train.dim(), eps, seed)?;
                let report = optimizer::train(&train, spec.lambda, spec.loss, &spec.optimizer, Some(&b))?;
                let j_p = objective::objective_j(report.params.as_slice(), &train, spec.lambda, &spec.loss)?;
                Ok(SweepCell {
                    epsilon: eps,
                    trial,
                    j_perturbed: j_p,
                    j_unperturbed: j_star,
                    excess: j_p - j_star,
                    bound,
                    acc_perturbed: model::accuracy(&report.params, &test)?,
                    acc_unperturbed: acc_star,
                    noise_norm: b.frob_norm(),
                    converged: report.converged,
                    radius_active: report.radius_active,
                    error: None,
                })
            })();
            outcome.unwrap_or_else(|err| SweepCell {
                epsilon: eps,
                trial,
                j_perturbed: f64::NAN,
                j_unperturbed: j_star,
                excess: f64::NAN,
                bound,
                acc_perturbed: f64::NAN,
                acc_unperturbed: acc_star,
                noise_norm: f64::NAN,
                converged: false,
                radius_active: false,
                error: Some(err.to_string()),
            })
        })
        .collect();

    let summaries = spec
        .epsilons
        .iter()
        .map(|&eps| {
            let mut excess: Vec<f64> =
                cells.iter().filter(|c| c.epsilon == eps && c.error.is_none()).map(|c| c.excess).collect();
            excess.sort_by(f64::total_cmp);
            let accs: Vec<f64> =
                cells.iter().filter(|c| c.epsilon == eps && c.error.is_none()).map(|c| c.acc_perturbed).collect();
            let failed = cells.iter().filter(|c| c.epsilon == eps && c.error.is_some()).count();
            Ok(EpsilonSummary {
                epsilon: eps,
                mean_excess: mean(&excess),
                median_excess: quantile(&excess, 0.5),
                q90_excess: quantile(&excess, 0.9),
                bound: privacy::empirical_risk_bound(train.dim(), train.num_classes(), eps, spec.lambda, spec.delta)?,
                true_risk_bound: privacy::true_risk_bound(
                    train.dim(),
                    train.num_classes(),
                    train.len(),
                    eps,
                    spec.lambda,
                    spec.delta,
                )?,
                mean_acc_perturbed: mean(&accs),
                failed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepResult {
        cells,
        summaries,
        j_unperturbed: j_star,
        acc_unperturbed: acc_star,
        unperturbed_converged: reference.converged,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
