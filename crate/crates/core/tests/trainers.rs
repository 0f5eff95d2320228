mod common;

use dladf::data::{TestData, TrainingData};
use dladf::eval::{log_loss, mean_and_std};
use dladf::losses::LossVariant;
use dladf::model::Optimizer;
use dladf::synthgen::{generate, generate_test_set, SynthConfig};
use dladf::trainers::{train_dfm, train_dla, train_dla_with, train_naive, train_oracle, PropensitySource, TrainConfig};
use dladf::Error;

use common::{mean_abs_cvr_error, no_delay_data};

fn dataset(n: usize, l: f64, seed: u64) -> TrainingData {
    TrainingData::from(
        &generate(&SynthConfig {
            n,
            training_period_days: l,
            seed,
            ..SynthConfig::default()
        })
        .unwrap(),
    )
}

#[test]
fn every_trainer_is_deterministic() {
    let data = dataset(3000, 1.0, 4);
    let cfg = TrainConfig {
        batch_size: 256,
        max_epochs: 20,
        seed: 9,
        ..TrainConfig::default()
    };
    assert_eq!(train_naive(&data, &cfg).unwrap(), train_naive(&data, &cfg).unwrap());
    assert_eq!(train_oracle(&data, &cfg).unwrap(), train_oracle(&data, &cfg).unwrap());
    assert_eq!(train_dfm(&data, &cfg).unwrap(), train_dfm(&data, &cfg).unwrap());
    assert_eq!(train_dla(&data, &cfg).unwrap(), train_dla(&data, &cfg).unwrap());
}

#[test]
fn small_step_sgd_epoch_loss_never_increases() {
    let data = dataset(10_000, 1.0, 2);
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd,
        learning_rate: 1e-3,
        max_epochs: 30,
        ..TrainConfig::default()
    };
    for (name, report) in [
        ("naive", train_naive(&data, &cfg).unwrap().1),
        ("oracle", train_oracle(&data, &cfg).unwrap().1),
    ] {
        for w in report.curve.windows(2) {
            assert!(w[1].loss <= w[0].loss, "{name}: {w:?}");
        }
    }
}

#[test]
fn nonneg_dual_learner_logs_nonnegative_losses() {
    let data = dataset(5000, 0.5, 3);
    let cfg = TrainConfig {
        max_epochs: 25,
        ..TrainConfig::default()
    };
    let out = train_dla(&data, &cfg).unwrap();
    assert!(out.report.epochs <= 25);
    for c in &out.report.curve {
        assert!(c.loss >= 0.0 && c.propensity_loss.unwrap() >= 0.0, "{c:?}");
    }
    assert!(out.propensity.is_propensity() && !out.cvr.is_propensity());
}

#[test]
fn true_propensities_make_the_cvr_step_consistent() {
    // Long window so that clipping leaves the unbiased estimator intact.
    let data = dataset(100_000, 1000.0, 1);
    let cfg = TrainConfig {
        loss_variant: LossVariant::Ips,
        seed: 1,
        ..TrainConfig::default()
    };
    let theta = data.theta_true.clone().unwrap();
    let out = train_dla_with(&data, &cfg, &PropensitySource::Fixed(theta)).unwrap();
    let err = mean_abs_cvr_error(&out.cvr, &data);
    assert!(err <= 0.02, "mean |pred - gamma| = {err}");
}

#[test]
fn naive_is_consistent_without_delay() {
    let errs: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| {
            let data = no_delay_data(n, 6);
            let cfg = TrainConfig {
                batch_size: 1024.min(n),
                ..TrainConfig::default()
            };
            mean_abs_cvr_error(&train_naive(&data, &cfg).unwrap().0, &data)
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn oracle_is_never_meaningfully_worse_than_naive() {
    let mut oracle = Vec::new();
    let mut naive = Vec::new();
    for seed in 1..=10 {
        let synth = SynthConfig {
            n: 5000,
            training_period_days: 1.0,
            seed,
            ..SynthConfig::default()
        };
        let ds = generate(&synth).unwrap();
        let test = TestData::from(&generate_test_set(&synth, &ds.coefficients).unwrap());
        let data = TrainingData::from(&ds);
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let score = |m: &dladf::model::LinearSigmoidModel| {
            let p: Vec<f64> = test.rows().map(|x| m.predict_cvr(x).unwrap()).collect();
            log_loss(&p, &test.y_true).unwrap()
        };
        oracle.push(score(&train_oracle(&data, &cfg).unwrap().0));
        naive.push(score(&train_naive(&data, &cfg).unwrap().0));
    }
    let (o, _) = mean_and_std(&oracle);
    let (n, n_std) = mean_and_std(&naive);
    assert!(o <= n + 3.0 * n_std.unwrap(), "oracle {o} naive {n}");
}

#[test]
fn oracle_equals_naive_when_nothing_is_delayed() {
    let data = no_delay_data(2000, 8);
    let cfg = TrainConfig {
        batch_size: 500,
        ..TrainConfig::default()
    };
    assert_eq!(train_oracle(&data, &cfg).unwrap(), train_naive(&data, &cfg).unwrap());
}

#[test]
fn full_batch_runs_one_update_per_epoch() {
    let data = dataset(800, 1.0, 2);
    let cfg = TrainConfig {
        batch_size: 800,
        max_epochs: 3,
        convergence_tol: 1e-300,
        ..TrainConfig::default()
    };
    let (model, report) = train_naive(&data, &cfg).unwrap();
    assert_eq!(report.epochs, 3);
    // With Adam's bias correction each coordinate moves by at most η per step.
    assert!(model.params().iter().all(|p| p.abs() <= 3.0 * 0.01 + 1e-12));
}

#[test]
fn preconditions_are_enforced() {
    let mut data = dataset(100, 1.0, 2);
    let too_big = TrainConfig {
        batch_size: 101,
        ..TrainConfig::default()
    };
    assert!(matches!(train_naive(&data, &too_big), Err(Error::Config(_))));

    data.y_true = None;
    assert!(matches!(
        train_oracle(&data, &TrainConfig {
            batch_size: 50,
            ..TrainConfig::default()
        }),
        Err(Error::UnavailableGroundTruth("y_true"))
    ));

    let first_obs = data.y_obs.iter().position(|&y| y).expect("some conversion observed");
    data.delay[first_obs] = None;
    assert!(matches!(
        train_dfm(&data, &TrainConfig {
            batch_size: 50,
            ..TrainConfig::default()
        }),
        Err(Error::MissingField { field: "d", .. })
    ));
}
