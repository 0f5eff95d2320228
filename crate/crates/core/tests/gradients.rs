mod common;

use dladf::losses::{grad_ips, grad_nonneg, weighted_terms, ClipPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{cvr_model, gradient_errors, Clicks};

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        let g = gradient_errors(seed, 5);
        assert!(g.ips < 1e-5, "ips {g:?}");
        assert!(g.icvr < 1e-5, "icvr {g:?}");
        assert!(g.nonneg < 1e-5, "nonneg {g:?}");
        assert!(g.dfm < 1e-5, "dfm {g:?}");
    }
}

#[test]
fn nonneg_gradient_masks_clamped_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let clip = ClipPolicy::default();
    let mut c = Clicks::random(&mut rng, 12, 4);

    // Unobserved samples have non-negative summands: no masking.
    c.y_obs = vec![false; 12];
    let w = [0.3, -0.2, 0.1, 0.4, 1.0];
    let m = cvr_model(&w);
    assert_eq!(
        grad_nonneg(&m, &c.batch(), &c.denominators, &clip).unwrap(),
        grad_ips(&m, &c.batch(), &c.denominators, &clip).unwrap()
    );

    // Confident positives with small propensities: every summand negative.
    c.y_obs = vec![true; 12];
    c.denominators = vec![0.05; 12];
    let m = cvr_model(&[0.0, 0.0, 0.0, 0.0, 4.0]);
    let preds: Vec<f64> = c.x.iter().map(|x| m.predict_cvr(x).unwrap()).collect();
    let terms = weighted_terms(&preds, &c.y_obs, &c.denominators, &clip).unwrap().terms;
    assert!(terms.iter().all(|&t| t < 0.0));
    let g = grad_nonneg(&m, &c.batch(), &c.denominators, &clip).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}
