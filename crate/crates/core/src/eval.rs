//! Test metrics and the experiment grid.
//!
//! A grid cell is one `(L, seed)` pair: a training set and a test set are
//! generated for it, every configured method is trained on the former and
//! scored on the latter, and relative log-loss divides by the same cell's
//! oracle. Cells run on a rayon pool; results are sorted into canonical
//! `(method, L, seed)` order afterwards so output never depends on scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{TestData, TrainingData};
use crate::error::{Error, Result};
use crate::losses::LossVariant;
use crate::model::{sigmoid, LinearSigmoidModel};
use crate::synthgen::{generate, generate_test_set, SynthConfig};
use crate::trainers::{train_dfm, train_dla, train_naive, train_oracle, DfmModel, TrainConfig};

const LOG_LOSS_CLAMP: f64 = 1e-12;

/// Mean binary cross entropy with predictions clamped to `[1e-12, 1 − 1e-12]`.
pub fn log_loss(preds: &[f64], y_true: &[bool]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("log_loss of an empty set"));
    }
    if preds.len() != y_true.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            y_true.len()
        )));
    }
    let total: f64 = preds
        .iter()
        .zip(y_true)
        .map(|(&p, &y)| {
            let p = p.clamp(LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / preds.len() as f64)
}

pub fn relative_log_loss(method_ll: f64, oracle_ll: f64) -> Result<f64> {
    if !(oracle_ll > 0.0) {
        return Err(Error::invalid(format!("oracle log-loss must be > 0, got {oracle_ll}")));
    }
    Ok(method_ll / oracle_ll)
}

/// Mean true propensity over the training samples.
pub fn mean_propensity(data: &TrainingData) -> Result<f64> {
    let theta = data.require_theta_true()?;
    if theta.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    Ok(theta.iter().sum::<f64>() / theta.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodId {
    Oracle,
    Naive,
    Dfm,
    Dla,
    NnDla,
}

impl MethodId {
    pub const ALL: [MethodId; 5] = [
        MethodId::Oracle,
        MethodId::Naive,
        MethodId::Dfm,
        MethodId::Dla,
        MethodId::NnDla,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodId::Oracle => "oracle",
            MethodId::Naive => "naive",
            MethodId::Dfm => "dfm",
            MethodId::Dla => "dla",
            MethodId::NnDla => "nn-dla",
        }
    }

    /// Estimator variant a dual-learning method implies.
    pub fn loss_variant(&self) -> Option<LossVariant> {
        match self {
            MethodId::Dla => Some(LossVariant::Ips),
            MethodId::NnDla => Some(LossVariant::Nonneg),
            _ => None,
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Any model whose CVR predictions can be scored.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Logistic(LinearSigmoidModel),
    Dfm(DfmModel),
}

impl TrainedModel {
    pub fn predict_all(&self, test: &TestData) -> Result<Vec<f64>> {
        let cvr = match self {
            TrainedModel::Logistic(m) => m,
            TrainedModel::Dfm(m) => &m.conversion,
        };
        if cvr.feature_dim() != test.dim() || cvr.is_propensity() {
            return Err(Error::DimensionMismatch {
                expected: test.dim(),
                got: cvr.feature_dim(),
            });
        }
        Ok(test.rows().map(|x| sigmoid(cvr.logit_unchecked(x, 0.0))).collect())
    }
}

/// Trains `method` and returns its CVR model plus whether it converged.
pub fn train_method(method: MethodId, data: &TrainingData, config: &TrainConfig) -> Result<(TrainedModel, bool)> {
    Ok(match method {
        MethodId::Oracle => {
            let (m, r) = train_oracle(data, config)?;
            (TrainedModel::Logistic(m), r.converged)
        }
        MethodId::Naive => {
            let (m, r) = train_naive(data, config)?;
            (TrainedModel::Logistic(m), r.converged)
        }
        MethodId::Dfm => {
            let (m, r) = train_dfm(data, config)?;
            (TrainedModel::Dfm(m), r.converged)
        }
        MethodId::Dla | MethodId::NnDla => {
            let cfg = TrainConfig {
                loss_variant: method.loss_variant().expect("dual method"),
                ..config.clone()
            };
            let out = train_dla(data, &cfg)?;
            (TrainedModel::Logistic(out.cvr), out.report.converged)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: MethodId,
    pub l: f64,
    pub seed: u64,
    pub test_log_loss: Option<f64>,
    pub relative_log_loss: Option<f64>,
    pub mean_propensity: f64,
    pub converged: bool,
    /// Set when training failed; such cells are excluded from aggregates.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: MethodId,
    pub l: f64,
    pub mean_rel_ll: f64,
    /// Sample standard deviation (divisor `n − 1`); `None` for fewer than two seeds.
    pub std_rel_ll: Option<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

/// Mean and sample standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, Some((ss / (n - 1.0)).sqrt()))
}

/// Formats a real with `sig` significant digits in positional notation.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

fn opt_real(v: Option<f64>) -> String {
    v.map(|v| fmt_sig(v, 10)).unwrap_or_default()
}

pub const CELLS_HEADER: [&str; 7] = [
    "method",
    "L",
    "seed",
    "test_log_loss",
    "relative_log_loss",
    "mean_propensity",
    "converged",
];
pub const AGGREGATES_HEADER: [&str; 5] = ["method", "L", "mean_rel_ll", "std_rel_ll", "n_seeds"];

impl ResultsTable {
    pub fn from_cells(mut cells: Vec<CellResult>) -> Self {
        cells.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.l.total_cmp(&b.l))
                .then(a.seed.cmp(&b.seed))
        });
        let mut groups: BTreeMap<(MethodId, u64), Vec<f64>> = BTreeMap::new();
        for c in &cells {
            let entry = groups.entry((c.method, c.l.to_bits())).or_default();
            if let (None, Some(r)) = (&c.failure, c.relative_log_loss) {
                entry.push(r);
            }
        }
        let mut aggregates: Vec<Aggregate> = groups
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|((method, l), v)| {
                let (mean, std) = mean_and_std(&v);
                Aggregate {
                    method,
                    l: f64::from_bits(l),
                    mean_rel_ll: mean,
                    std_rel_ll: std,
                    n_seeds: v.len(),
                }
            })
            .collect();
        aggregates.sort_by(|a, b| a.method.cmp(&b.method).then(a.l.total_cmp(&b.l)));
        Self { cells, aggregates }
    }

    pub fn failed_cells(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.failure.is_some())
    }

    pub fn aggregate(&self, method: MethodId, l: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.l == l)
    }

    pub fn write_cells_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CELLS_HEADER)?;
        for c in &self.cells {
            out.write_record([
                c.method.as_str().to_string(),
                c.l.to_string(),
                c.seed.to_string(),
                opt_real(c.test_log_loss),
                opt_real(c.relative_log_loss),
                fmt_sig(c.mean_propensity, 10),
                c.converged.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_aggregates_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(AGGREGATES_HEADER)?;
        for a in &self.aggregates {
            out.write_record([
                a.method.as_str().to_string(),
                a.l.to_string(),
                fmt_sig(a.mean_rel_ll, 10),
                opt_real(a.std_rel_ll),
                a.n_seeds.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn cells_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_cells_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn aggregates_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_aggregates_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub synth: SynthConfig,
    pub l_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodId>,
    /// Per-method training configuration; missing methods use the default.
    pub train: BTreeMap<MethodId, TrainConfig>,
}

impl ExperimentGrid {
    pub fn new(synth: SynthConfig, l_values: Vec<f64>, seeds: Vec<u64>, methods: Vec<MethodId>) -> Self {
        Self {
            synth,
            l_values,
            seeds,
            methods,
            train: BTreeMap::new(),
        }
    }

    pub fn train_config(&self, method: MethodId) -> TrainConfig {
        self.train.get(&method).cloned().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_values.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("grid needs at least one L, seed and method".into()));
        }
        for &l in &self.l_values {
            SynthConfig {
                training_period_days: l,
                ..self.synth.clone()
            }
            .validate()?;
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("duplicate method in grid".into()));
        }
        for m in &self.methods {
            self.train_config(*m).validate_for(self.synth.n)?;
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.l_values.len() * self.seeds.len() * self.methods.len()
    }
}

/// Runs one `(L, seed)` cell for every method.
pub fn run_cell(grid: &ExperimentGrid, l: f64, seed: u64) -> Result<Vec<CellResult>> {
    let synth = SynthConfig {
        training_period_days: l,
        seed,
        ..grid.synth.clone()
    };
    let ds = generate(&synth)?;
    let test = TestData::from(&generate_test_set(&synth, &ds.coefficients)?);
    let data = TrainingData::from(&ds);
    drop(ds);
    let mean_prop = mean_propensity(&data)?;

    let mut results: Vec<CellResult> = grid
        .methods
        .iter()
        .map(|&method| {
            let config = TrainConfig {
                seed,
                ..grid.train_config(method)
            };
            let mut cell = CellResult {
                method,
                l,
                seed,
                test_log_loss: None,
                relative_log_loss: None,
                mean_propensity: mean_prop,
                converged: false,
                failure: None,
            };
            let scored = train_method(method, &data, &config)
                .and_then(|(model, conv)| Ok((log_loss(&model.predict_all(&test)?, &test.y_true)?, conv)));
            match scored {
                Ok((ll, conv)) => {
                    cell.test_log_loss = Some(ll);
                    cell.converged = conv;
                }
                Err(e) => cell.failure = Some(e.to_string()),
            }
            cell
        })
        .collect();

    let oracle_ll = results
        .iter()
        .find(|c| c.method == MethodId::Oracle)
        .and_then(|c| c.test_log_loss);
    if let Some(oracle_ll) = oracle_ll {
        for c in results.iter_mut() {
            if let Some(ll) = c.test_log_loss {
                c.relative_log_loss = relative_log_loss(ll, oracle_ll).ok();
            }
        }
    }
    Ok(results)
}

pub fn run_experiment(grid: &ExperimentGrid, jobs: usize) -> Result<ResultsTable> {
    run_experiment_with_progress(grid, jobs, |_| {})
}

/// Like [`run_experiment`], calling `progress` after each finished `(L, seed)` cell.
pub fn run_experiment_with_progress<F>(grid: &ExperimentGrid, jobs: usize, progress: F) -> Result<ResultsTable>
where
    F: Fn(&[CellResult]) + Sync,
{
    grid.validate()?;
    let work: Vec<(f64, u64)> = grid
        .l_values
        .iter()
        .flat_map(|&l| grid.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let cells: Vec<Vec<CellResult>> = pool.install(|| {
        work.par_iter()
            .map(|&(l, seed)| {
                let r = run_cell(grid, l, seed)?;
                progress(&r);
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ResultsTable::from_cells(cells.into_iter().flatten().collect()))
}
