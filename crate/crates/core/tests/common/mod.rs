//! Oracles and fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use dladf::data::TrainingData;
use dladf::losses::{
    cross_entropy_deltas, grad_icvr, grad_ips, grad_nonneg, icvr_loss, icvr_variance, ips_loss, ips_variance,
    nonneg_loss, weighted_terms, ClipPolicy, LabeledBatch,
};
use dladf::model::LinearSigmoidModel;
use dladf::synthgen::{generate, SynthConfig};
use dladf::trainers::{dfm_negative_log_likelihood, dfm_objective, DfmModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRID_PROBS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const GRID_PREDS: [f64; 3] = [0.1, 0.5, 0.9];

/// The four `(O, Y)` outcomes as `(probability, y_obs)`.
pub fn outcomes(gamma: f64, theta: f64) -> [(f64, bool); 4] {
    [
        (gamma * theta, true),
        (gamma * (1.0 - theta), false),
        ((1.0 - gamma) * theta, false),
        ((1.0 - gamma) * (1.0 - theta), false),
    ]
}

/// Weighted cross entropy written out by hand.
pub fn hand_summand(pred: f64, y_obs: bool, denom: f64) -> f64 {
    let w = if y_obs { 1.0 / denom } else { 0.0 };
    -w * pred.ln() - (1.0 - w) * (1.0 - pred).ln()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct EnumerationErrors {
    /// |E[summand] − ideal| maximised over the grid.
    pub ips_bias: f64,
    pub icvr_bias: f64,
    /// |Var[summand] − closed form| maximised over the grid.
    pub ips_variance: f64,
    pub icvr_variance: f64,
    /// |library summand − hand summand| maximised over grid and outcomes.
    pub summand: f64,
}

/// Exact expectations and variances over the four outcomes for every grid point.
pub fn enumerate_estimators() -> EnumerationErrors {
    let clip = ClipPolicy::disabled();
    let mut err = EnumerationErrors::default();
    for &gamma in &GRID_PROBS {
        for &theta in &GRID_PROBS {
            for &pred in &GRID_PREDS {
                let (d1, d0) = (-pred.ln(), -(1.0 - pred).ln());
                let deltas = cross_entropy_deltas(pred).unwrap();

                // CVR side: weights y_obs / θ, target γ·δ1 + (1 − γ)·δ0.
                let mut mean = 0.0;
                let mut second = 0.0;
                for (prob, y) in outcomes(gamma, theta) {
                    let l = ips_loss(&[pred], &[y], &[theta], &clip).unwrap();
                    err.summand = err.summand.max((l - hand_summand(pred, y, theta)).abs());
                    mean += prob * l;
                    second += prob * l * l;
                }
                err.ips_bias = err.ips_bias.max((mean - (gamma * d1 + (1.0 - gamma) * d0)).abs());
                let var = second - mean * mean;
                let lib = ips_variance(&[gamma], &[theta], &[deltas]).unwrap();
                let closed = gamma * (1.0 / theta - gamma) * (d1 - d0).powi(2);
                err.ips_variance = err.ips_variance.max((var - closed).abs()).max((lib - closed).abs());

                // Propensity side: weights y_obs / γ, target θ·δ1 + (1 − θ)·δ0.
                let mut mean = 0.0;
                let mut second = 0.0;
                for (prob, y) in outcomes(gamma, theta) {
                    let l = icvr_loss(&[pred], &[y], &[gamma], &clip).unwrap();
                    err.summand = err.summand.max((l - hand_summand(pred, y, gamma)).abs());
                    mean += prob * l;
                    second += prob * l * l;
                }
                err.icvr_bias = err.icvr_bias.max((mean - (theta * d1 + (1.0 - theta) * d0)).abs());
                let var = second - mean * mean;
                let lib = icvr_variance(&[theta], &[gamma], &[deltas]).unwrap();
                let closed = theta * (1.0 / gamma - theta) * (d1 - d0).powi(2);
                err.icvr_variance = err.icvr_variance.max((var - closed).abs()).max((lib - closed).abs());
            }
        }
    }
    err
}

/// Central finite differences of `f` at `params`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..params.len())
        .map(|j| {
            x[j] = params[j] + h;
            let up = f(&x);
            x[j] = params[j] - h;
            let down = f(&x);
            x[j] = params[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Owned click records for building a [`LabeledBatch`].
#[derive(Debug, Clone)]
pub struct Clicks {
    pub x: Vec<Vec<f64>>,
    pub e: Vec<f64>,
    pub y_obs: Vec<bool>,
    pub denominators: Vec<f64>,
    pub delays: Vec<Option<f64>>,
}

impl Clicks {
    pub fn random(rng: &mut impl Rng, n: usize, p: usize) -> Self {
        let mut c = Clicks {
            x: Vec::new(),
            e: Vec::new(),
            y_obs: Vec::new(),
            denominators: Vec::new(),
            delays: Vec::new(),
        };
        for _ in 0..n {
            c.x.push((0..p).map(|_| rng.random_range(-1.0..1.0)).collect());
            let e = rng.random_range(0.0..2.0);
            c.e.push(e);
            let y = rng.random_bool(0.4);
            c.y_obs.push(y);
            c.denominators.push(rng.random_range(0.05..1.0));
            c.delays.push(y.then(|| rng.random_range(0.0..e)));
        }
        c
    }

    pub fn batch(&self) -> LabeledBatch<'_> {
        LabeledBatch::new(
            self.x.iter().map(Vec::as_slice).collect(),
            self.e.clone(),
            self.y_obs.clone(),
            None,
            None,
        )
        .unwrap()
    }
}

pub fn cvr_model(params: &[f64]) -> LinearSigmoidModel {
    let n = params.len();
    LinearSigmoidModel::from_parts(params[..n - 1].to_vec(), params[n - 1]).unwrap()
}

pub fn propensity_model(params: &[f64]) -> LinearSigmoidModel {
    cvr_model(params).into_propensity().unwrap()
}

fn random_params(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn cvr_preds(params: &[f64], c: &Clicks) -> Vec<f64> {
    let m = cvr_model(params);
    c.x.iter().map(|x| m.predict_cvr(x).unwrap()).collect()
}

fn propensity_preds(params: &[f64], c: &Clicks) -> Vec<f64> {
    let m = propensity_model(params);
    c.x.iter().zip(&c.e).map(|(x, &e)| m.predict_propensity(x, e).unwrap()).collect()
}

/// Maximum relative error between analytic and finite-difference gradients
/// over `points` random parameter points, per loss.
#[derive(Debug, Clone, Copy)]
pub struct GradientErrors {
    pub ips: f64,
    pub icvr: f64,
    pub nonneg: f64,
    pub dfm: f64,
}

pub const FD_STEP: f64 = 1e-6;

pub fn gradient_errors(seed: u64, points: usize) -> GradientErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p) = (24, 5);
    let clip = ClipPolicy::default();
    let mut out = GradientErrors {
        ips: 0.0,
        icvr: 0.0,
        nonneg: 0.0,
        dfm: 0.0,
    };
    for _ in 0..points {
        let c = Clicks::random(&mut rng, n, p);
        let batch = c.batch();

        let w = random_params(&mut rng, p + 1);
        let analytic = grad_ips(&cvr_model(&w), &batch, &c.denominators, &clip).unwrap();
        let fd = central_difference(
            |q| ips_loss(&cvr_preds(q, &c), &c.y_obs, &c.denominators, &clip).unwrap(),
            &w,
            FD_STEP,
        );
        out.ips = out.ips.max(relative_error(&analytic, &fd));

        let v = random_params(&mut rng, p + 2);
        let analytic = grad_icvr(&propensity_model(&v), &batch, &c.denominators, &clip).unwrap();
        let fd = central_difference(
            |q| icvr_loss(&propensity_preds(q, &c), &c.y_obs, &c.denominators, &clip).unwrap(),
            &v,
            FD_STEP,
        );
        out.icvr = out.icvr.max(relative_error(&analytic, &fd));

        // A point where some summands are clamped and none sits near the kink.
        let clamped_terms = |q: &[f64]| {
            weighted_terms(&cvr_preds(q, &c), &c.y_obs, &c.denominators, &clip)
                .unwrap()
                .terms
        };
        let w = loop {
            let mut cand = random_params(&mut rng, p + 1);
            cand[p] = rng.random_range(0.5..2.5);
            let terms = clamped_terms(&cand);
            let mixed = terms.iter().any(|&t| t < 0.0) && terms.iter().any(|&t| t > 0.0);
            if mixed && terms.iter().all(|t| t.abs() > 1e-3) {
                break cand;
            }
        };
        let analytic = grad_nonneg(&cvr_model(&w), &batch, &c.denominators, &clip).unwrap();
        let fd = central_difference(|q| nonneg_loss(&clamped_terms(q)), &w, FD_STEP);
        out.nonneg = out.nonneg.max(relative_error(&analytic, &fd));

        let theta = random_params(&mut rng, 2 * (p + 1));
        let model = DfmModel::from_params(p, &theta).unwrap();
        let analytic = dfm_objective(&model, &batch, &c.delays).unwrap().grad;
        let fd = central_difference(
            |q| dfm_negative_log_likelihood(&DfmModel::from_params(p, q).unwrap(), &batch, &c.delays).unwrap(),
            &theta,
            FD_STEP,
        );
        out.dfm = out.dfm.max(relative_error(&analytic, &fd));
    }
    out
}

/// Synthetic clicks with every conversion observed at once: `d = 0`,
/// `y_obs = y_true` and `θ = 1`.
pub fn no_delay_data(n: usize, seed: u64) -> TrainingData {
    let ds = generate(&SynthConfig {
        n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut data = TrainingData::from(&ds);
    let y_true = data.y_true.clone().unwrap();
    data.y_obs = y_true;
    data.o_true = Some(vec![true; n]);
    data.delay = vec![Some(0.0); n];
    data.theta_true = Some(vec![1.0; n]);
    data
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean |prediction − γ| over the training rows.
pub fn mean_abs_cvr_error(model: &LinearSigmoidModel, data: &TrainingData) -> f64 {
    let gamma = data.gamma_true.as_ref().unwrap();
    data.rows()
        .zip(gamma)
        .map(|(x, &g)| (model.predict_cvr(x).unwrap() - g).abs())
        .sum::<f64>()
        / data.len() as f64
}
