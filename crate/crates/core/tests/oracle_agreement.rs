//! Library computations against the brute-force oracle.

use lmgc::linalg::{self, SymMatrix};
use lmgc::{loss, model, objective, ClassParams, HuberLoss, LabeledDataset, PerturbationMatrix};
use lmgc_oracle as oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> LabeledDataset {
    let instances = (0..n).map(|_| oracle::random_ball_instance(d, rng)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    LabeledDataset::new(instances, labels, classes, 1.0).unwrap()
}

fn params(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> Vec<SymMatrix> {
    (0..classes).map(|_| oracle::random_psd(dim, 2.0, rng)).collect()
}

#[test]
fn scores_and_predictions_match_double_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let d = rng.random_range(1..6);
        let phis = params(&mut rng, d + 1, 4);
        let x = oracle::random_ball_instance(d, &mut rng);
        for phi in &phis {
            let s = model::score(phi, &x).unwrap();
            assert!((s - oracle::naive_score(phi, &x)).abs() <= 1e-12 * s.abs().max(1.0));
        }
        let cp = ClassParams::new(phis.clone()).unwrap();
        assert_eq!(model::predict(&cp, &x).unwrap(), oracle::naive_predict(&phis, &x));
    }
}

#[test]
fn objective_pieces_match_naive_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..30 {
        let (d, classes) = ([1, 2, 4][trial % 3], [2, 3][trial % 2]);
        let data = dataset(&mut rng, 25, d, classes);
        let phis = params(&mut rng, d + 1, classes);
        let loss = HuberLoss::new(rng.random_range(0.1..1.0), rng.random_range(0.0..2.0)).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1.0);
        assert!(close(
            loss::empirical_loss(&phis, &data, &loss).unwrap(),
            oracle::naive_empirical_loss(&phis, &data, loss.h, loss.margin_target)
        ));
        assert!(close(loss::hinge_loss_total(&phis, &data).unwrap(), oracle::naive_hinge(&phis, &data)));
        assert!(close(objective::regularizer(&phis, 0.3), oracle::naive_regularizer(&phis, 0.3)));
        let b = PerturbationMatrix::new(d + 1, (0..(d + 1) * (d + 1)).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap();
        assert!(close(objective::perturbation_term(&phis, &b).unwrap(), oracle::naive_perturbation_term(&phis, &b)));
    }
}

#[test]
fn instance_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let loss = HuberLoss::default();
    let mut checked = 0;
    while checked < 40 {
        let d = rng.random_range(1..5);
        let phis = params(&mut rng, d + 1, 3);
        let x = oracle::random_ball_instance(d, &mut rng);
        let y = rng.random_range(0..3);
        let near_kink = (0..3).filter(|&c| c != y).any(|c| {
            let m = loss::margin(&phis, &x, y, c).unwrap() - loss.margin_target;
            (m.abs() - loss.h).abs() < 1e-3
        });
        if near_kink {
            continue;
        }
        let fd =
            oracle::fd_gradient(|p| loss::instance_loss(p, &x, y, &loss), &phis, oracle::FDSpec::default()).unwrap();
        let an = loss::instance_loss_grad(&phis, &x, y, &loss);
        assert!(oracle::max_rel_error(&an, &fd) < 1e-6);
        checked += 1;
    }
}

#[test]
fn psd_projection_satisfies_the_variational_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let dim = rng.random_range(2..6);
        let m = oracle::random_sym(dim, 3.0, &mut rng);
        let p = linalg::psd_project(&m).unwrap();
        let worst = oracle::projection_probe(&m, &p, 300, &mut rng, |r| oracle::random_psd(dim, 3.0, r));
        assert!(worst <= 1e-10, "probe {worst}");

        let radius = 1.5;
        let q = linalg::psd_ball_project(&m, radius).unwrap();
        let worst = oracle::projection_probe(&m, &q, 300, &mut rng, |r| {
            let z = oracle::random_psd(dim, 3.0, r);
            let n = linalg::frob_norm(&z);
            if n > radius {
                z.scale(radius / n)
            } else {
                z
            }
        });
        assert!(worst <= 1e-10, "ball probe {worst}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_functional_gradient_is_its_symmetric_coefficient(seed in any::<u64>(), dim in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = PerturbationMatrix::new(dim, (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let phis = params(&mut rng, dim, 2);
        let fd = oracle::fd_gradient(|p| objective::perturbation_term(p, &b).unwrap(), &phis, oracle::FDSpec::default()).unwrap();
        for g in fd {
            prop_assert!(g.max_abs_diff(&b.symmetric_part()) < 1e-8);
        }
    }
}
