//! Synthetic click logs with delayed conversions.
//!
//! Each dataset is drawn from a ChaCha20 stream keyed by `(seed, purpose)`:
//! coefficients, training samples and the held-out test set use separate
//! stream ids, so changing the training period `L` keeps the coefficients,
//! features and click-time quantiles of a seed unchanged.
//!
//! Per sample, in order: `x ~ N(0, σ_X² I)`, `γ = sigmoid(W_cvr·x)`,
//! `ts_click ~ U[0, L)`, the delay `D`, `E = L − ts_click`, `O`,
//! `Y ~ Bern(γ)` and `Y_obs = O·Y`. The delay has mean `exp(W_expo·x)` days.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{dot, gaussian_vec, sigmoid, FeatureVector, PROB_MAX, PROB_MIN};

const STREAM_COEFFICIENTS: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_TEST: u64 = 3;

/// Generator for one purpose of one seed.
pub fn stream(seed: u64, purpose: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DelayFamily {
    #[default]
    Exponential,
    /// Normal truncated to `[0, ∞)`.
    Normal,
}

/// When a conversion counts as observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationRule {
    /// `O = 1{D ≤ E}`: observed once the delay has elapsed since the click.
    #[default]
    Elapsed,
    /// `O = 1{D ≤ L}`: only the period length matters.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub p: usize,
    pub sigma_x: f64,
    pub sigma_w: f64,
    pub training_period_days: f64,
    pub delay_family: DelayFamily,
    pub normal_delay_std: f64,
    pub observation_rule: ObservationRule,
    pub seed: u64,
    /// Held-out test-set size; defaults to `n`.
    pub test_n: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            p: 30,
            sigma_x: 0.5,
            sigma_w: 1.0,
            training_period_days: 1.0,
            delay_family: DelayFamily::Exponential,
            normal_delay_std: 1.0,
            observation_rule: ObservationRule::Elapsed,
            seed: 1,
            test_n: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.p == 0 {
            return fail("p must be at least 1".into());
        }
        if self.test_n == Some(0) {
            return fail("test_n must be at least 1".into());
        }
        let positive = [
            ("sigma_x", self.sigma_x),
            ("training_period_days", self.training_period_days),
            ("normal_delay_std", self.normal_delay_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.sigma_w >= 0.0 && self.sigma_w.is_finite()) {
            return fail(format!("sigma_w must be finite and >= 0, got {}", self.sigma_w));
        }
        Ok(())
    }

    pub fn test_size(&self) -> usize {
        self.test_n.unwrap_or(self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub w_cvr: Vec<f64>,
    pub w_expo: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub x: FeatureVector,
    pub ts_click: f64,
    pub d: f64,
    pub e: f64,
    pub gamma_true: f64,
    pub theta_true: f64,
    pub y_true: bool,
    pub o_true: bool,
    pub y_obs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub coefficients: Coefficients,
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Test-time record: no delay, elapsed time or observation indicator exists.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSample {
    pub x: FeatureVector,
    pub gamma_true: f64,
    pub y_true: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub samples: Vec<TestSample>,
}

impl TestSet {
    pub fn labels(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.y_true).collect()
    }
}

pub fn sample_coefficients<R: Rng + ?Sized>(p: usize, sigma_w: f64, rng: &mut R) -> Coefficients {
    let w_cvr = gaussian_vec(rng, p, sigma_w);
    let w_expo = gaussian_vec(rng, p, sigma_w);
    Coefficients { w_cvr, w_expo }
}

fn check_dims(x: &[f64], w: &[f64]) -> Result<()> {
    if x.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `sigmoid(W_cvr·x)`; there is no intercept.
pub fn true_cvr(x: &[f64], w_cvr: &[f64]) -> Result<f64> {
    check_dims(x, w_cvr)?;
    Ok(sigmoid(dot(w_cvr, x)))
}

/// Mean delay in days, `exp(W_expo·x)`.
pub fn mean_delay(x: &[f64], w_expo: &[f64]) -> Result<f64> {
    check_dims(x, w_expo)?;
    Ok(dot(w_expo, x).exp())
}

pub fn sample_delay<R: Rng + ?Sized>(
    x: &[f64],
    w_expo: &[f64],
    family: DelayFamily,
    normal_std: f64,
    rng: &mut R,
) -> Result<f64> {
    let mu = mean_delay(x, w_expo)?;
    Ok(draw_delay(mu, family, normal_std, rng))
}

fn draw_delay<R: Rng + ?Sized>(mu: f64, family: DelayFamily, normal_std: f64, rng: &mut R) -> f64 {
    match family {
        DelayFamily::Exponential => {
            let u: f64 = Exp1.sample(rng);
            mu * u
        }
        DelayFamily::Normal => loop {
            // mu > 0, so each draw is accepted with probability above 1/2
            let z: f64 = StandardNormal.sample(rng);
            let d = mu + normal_std * z;
            if d >= 0.0 {
                break d;
            }
        },
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(D ≤ e)` for a delay with mean `mu`.
pub fn delay_cdf(e: f64, mu: f64, family: DelayFamily, normal_std: f64) -> f64 {
    if e <= 0.0 {
        return 0.0;
    }
    match family {
        DelayFamily::Exponential => -(-e / mu).exp_m1(),
        DelayFamily::Normal => {
            let below_zero = std_normal_cdf(-mu / normal_std);
            let mass = std_normal_cdf(mu / normal_std);
            let num = std_normal_cdf((e - mu) / normal_std) - below_zero;
            (num / mass).clamp(0.0, 1.0)
        }
    }
}

/// True propensity `θ(x, e)`: the delay CDF at the elapsed time.
pub fn true_propensity(
    x: &[f64],
    e: f64,
    coefficients: &Coefficients,
    family: DelayFamily,
    normal_std: f64,
) -> Result<f64> {
    if !(e >= 0.0) {
        return Err(Error::invalid(format!("elapsed time must be >= 0, got {e}")));
    }
    let mu = mean_delay(x, &coefficients.w_expo)?;
    Ok(delay_cdf(e, mu, family, normal_std))
}

/// Splits `[0, L)` at a uniform quantile so that `e + ts_click == L` exactly.
///
/// `L = M·q` with integer mantissa `M` and `q = ulp(L)`; the click time is
/// `k·q` for `k = ⌊u·M⌋`, so both parts are exact multiples of `q`.
fn split_period(l: f64, u: f64) -> (f64, f64) {
    let bits = l.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let (mantissa, exponent) = if exp_bits == 0 {
        (bits & ((1 << 52) - 1), -1074)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), exp_bits - 1075)
    };
    let q = 2f64.powi(exponent);
    let m = mantissa as f64;
    let k = (u * m).floor().min(m - 1.0);
    (k * q, (m - k) * q)
}

fn draw_features<R: Rng + ?Sized>(p: usize, normal: &Normal<f64>, rng: &mut R) -> FeatureVector {
    let values: Vec<f64> = (0..p).map(|_| normal.sample(rng)).collect();
    FeatureVector::new(values).expect("gaussian draws are finite")
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let coefficients = sample_coefficients(
        config.p,
        config.sigma_w,
        &mut stream(config.seed, STREAM_COEFFICIENTS),
    );
    let mut rng = stream(config.seed, STREAM_TRAIN);
    let x_dist = Normal::new(0.0, config.sigma_x).map_err(|e| Error::Config(e.to_string()))?;
    let l = config.training_period_days;
    let mut samples = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let x = draw_features(config.p, &x_dist, &mut rng);
        let gamma_true = true_cvr(&x, &coefficients.w_cvr)?;
        let (ts_click, e) = split_period(l, rng.random::<f64>());
        let mu = mean_delay(&x, &coefficients.w_expo)?;
        let d = draw_delay(mu, config.delay_family, config.normal_delay_std, &mut rng);
        let horizon = match config.observation_rule {
            ObservationRule::Elapsed => e,
            ObservationRule::Literal => l,
        };
        let o_true = d <= horizon;
        let y_true = rng.random::<f64>() < gamma_true;
        let theta = delay_cdf(horizon, mu, config.delay_family, config.normal_delay_std);
        samples.push(SyntheticSample {
            x,
            ts_click,
            d,
            e,
            gamma_true,
            theta_true: theta.clamp(PROB_MIN, PROB_MAX),
            y_true,
            o_true,
            y_obs: o_true && y_true,
        });
    }
    Ok(SyntheticDataset {
        config: config.clone(),
        coefficients,
        samples,
    })
}

/// Fresh features and true labels under the training set's coefficients.
pub fn generate_test_set(config: &SynthConfig, coefficients: &Coefficients) -> Result<TestSet> {
    config.validate()?;
    if coefficients.w_cvr.len() != config.p {
        return Err(Error::DimensionMismatch {
            expected: config.p,
            got: coefficients.w_cvr.len(),
        });
    }
    let mut rng = stream(config.seed, STREAM_TEST);
    let x_dist = Normal::new(0.0, config.sigma_x).map_err(|e| Error::Config(e.to_string()))?;
    let samples = (0..config.test_size())
        .map(|_| {
            let x = draw_features(config.p, &x_dist, &mut rng);
            let gamma_true = true_cvr(&x, &coefficients.w_cvr)?;
            let y_true = rng.random::<f64>() < gamma_true;
            Ok(TestSample { x, gamma_true, y_true })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestSet { samples })
}
