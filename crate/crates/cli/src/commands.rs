use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dladf::data::{read_dataset, write_dataset, LoadedDataset, TestData};
use dladf::eval::{fmt_sig, log_loss, mean_propensity, run_experiment_with_progress, CellResult, MethodId};
use dladf::losses::{icvr_variance, ips_variance, DeltaPair};
use dladf::model::LinearSigmoidModel;
use dladf::synthgen::{self, generate_test_set};
use dladf::trainers::{train_dfm, train_dla, train_naive, train_oracle, DfmModel, TrainReport};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfigFile, Seeds};
use crate::{CliError, EvaluateArgs, ExperimentArgs, GenerateArgs, TrainArgs, VarianceArgs};

type CliResult<T = ()> = Result<T, CliError>;

/// Writes through a temporary file in the target directory, renamed into place on success.
fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> dladf::Result<()>) -> CliResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| CliError::runtime(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        w.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        Ok(w.write_all(b"\n")?)
    })
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn load_dataset(path: &Path) -> CliResult<LoadedDataset> {
    let f = File::open(path).map_err(|e| CliError::runtime(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(BufReader::new(f)).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ModelFile {
    Logistic(LinearSigmoidModel),
    Dfm(DfmModel),
}

impl ModelFile {
    fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|_| CliError::runtime(format!("{}: not a model file", path.display())))
    }

    fn cvr(&self, path: &Path) -> CliResult<&LinearSigmoidModel> {
        let m = match self {
            ModelFile::Logistic(m) => m,
            ModelFile::Dfm(m) => &m.conversion,
        };
        if m.is_propensity() {
            return Err(CliError::runtime(format!("{}: expected a CVR model, got a propensity model", path.display())));
        }
        Ok(m)
    }
}

fn report_line(report: &TrainReport) -> String {
    let mut s = format!(
        "epochs={} final_loss={} converged={} clip_activations={}",
        report.epochs,
        fmt_sig(report.final_loss, 10),
        report.converged,
        report.clip_activations
    );
    if let Some(pl) = report.final_propensity_loss {
        s.push_str(&format!(" final_propensity_loss={}", fmt_sig(pl, 10)));
    }
    s
}

pub fn generate(args: GenerateArgs) -> CliResult {
    let cfg = RunConfigFile::load(args.cfg.config.as_deref())?;
    let mut synth = cfg.synth;
    if let Some(seed) = args.cfg.seed {
        synth.seed = seed;
    }
    synth.validate().map_err(CliError::from_config)?;

    let ds = synthgen::generate(&synth).map_err(CliError::from_runtime)?;
    write_atomic(&args.out, |w| write_dataset(&ds, w))?;

    let n = ds.len() as f64;
    let theta = ds.samples.iter().map(|s| s.theta_true).sum::<f64>() / n;
    let pos = ds.samples.iter().filter(|s| s.y_true).count() as f64 / n;
    let obs = ds.samples.iter().filter(|s| s.y_obs).count() as f64 / n;
    println!(
        "n={} L={} seed={} mean_propensity={} positive_rate={} observed_positive_rate={}",
        ds.len(),
        synth.training_period_days,
        synth.seed,
        fmt_sig(theta, 10),
        fmt_sig(pos, 10),
        fmt_sig(obs, 10)
    );
    println!("wrote {} records to {}", ds.len(), args.out.display());
    Ok(())
}

pub fn train(args: TrainArgs) -> CliResult {
    let cfg = RunConfigFile::load(args.cfg.config.as_deref())?;
    let mut tc = cfg.train_config(args.method)?;
    if let Some(seed) = args.cfg.seed {
        tc.seed = seed;
    }
    if let Some(v) = args.method.loss_variant() {
        tc.loss_variant = v;
    }

    let data = load_dataset(&args.data)?.data;
    if tc.batch_size > data.len() {
        return Err(CliError::config(format!(
            "batch_size {} exceeds dataset size {}",
            tc.batch_size,
            data.len()
        )));
    }
    let rt = CliError::from_runtime;
    let (files, report): (Vec<(&str, ModelFile)>, TrainReport) = match args.method {
        MethodId::Oracle => {
            let (m, r) = train_oracle(&data, &tc).map_err(rt)?;
            (vec![("model.json", ModelFile::Logistic(m))], r)
        }
        MethodId::Naive => {
            let (m, r) = train_naive(&data, &tc).map_err(rt)?;
            (vec![("model.json", ModelFile::Logistic(m))], r)
        }
        MethodId::Dfm => {
            let (m, r) = train_dfm(&data, &tc).map_err(rt)?;
            (vec![("model.json", ModelFile::Dfm(m))], r)
        }
        MethodId::Dla | MethodId::NnDla => {
            let out = train_dla(&data, &tc).map_err(rt)?;
            (
                vec![
                    ("f.json", ModelFile::Logistic(out.cvr)),
                    ("g.json", ModelFile::Logistic(out.propensity)),
                ],
                out.report,
            )
        }
    };

    create_dir(&args.out)?;
    for (name, model) in &files {
        write_json(&args.out.join(name), model)?;
    }
    write_json(&args.out.join("report.json"), &report)?;
    write_text(&args.out.join("curve.csv"), &report.curve_csv())?;

    println!("method={} n={} seed={} {}", args.method, data.len(), tc.seed, report_line(&report));
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).collect();
    println!(
        "trained {} in {} epochs; wrote {} and report.json to {}",
        args.method,
        report.epochs,
        names.join(", "),
        args.out.display()
    );
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> CliResult {
    let models = args
        .model
        .iter()
        .map(|p| ModelFile::load(p).map(|m| (p, m)))
        .collect::<CliResult<Vec<_>>>()?;
    let loaded = load_dataset(&args.data)?;
    let header = loaded.header.ok_or_else(|| {
        CliError::runtime(format!(
            "{}: dataset has no header, so its test distribution is unknown",
            args.data.display()
        ))
    })?;
    let test = TestData::from(&generate_test_set(&header.config, &header.coefficients).map_err(CliError::from_runtime)?);
    for (path, model) in &models {
        let cvr = model.cvr(path)?;
        let preds = test
            .rows()
            .map(|x| cvr.predict_cvr(x))
            .collect::<dladf::Result<Vec<_>>>()
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let ll = log_loss(&preds, &test.y_true).map_err(CliError::from_runtime)?;
        println!("model={} n_test={} test_log_loss={}", path.display(), test.len(), fmt_sig(ll, 10));
    }
    Ok(())
}

fn cell_line(c: &CellResult) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| fmt_sig(v, 10));
    let mut s = format!(
        "cell method={} L={} seed={} test_log_loss={} relative_log_loss={} converged={}",
        c.method,
        fmt_sig(c.l, 10),
        c.seed,
        opt(c.test_log_loss),
        opt(c.relative_log_loss),
        c.converged
    );
    if let Some(f) = &c.failure {
        s.push_str(&format!(" failure={f:?}"));
    }
    s
}

pub fn experiment(args: ExperimentArgs) -> CliResult {
    let mut cfg = RunConfigFile::load(args.cfg.config.as_deref())?;
    if let Some(seed) = args.cfg.seed {
        cfg.experiment.seeds = Seeds::List(vec![seed]);
    }
    let grid = cfg.grid()?;
    let jobs = match args.jobs {
        Some(0) => return Err(CliError::config("--jobs must be at least 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let cells_path: PathBuf = args.out.join(&cfg.experiment.cells_csv);
    let agg_path: PathBuf = args.out.join(&cfg.experiment.aggregates_csv);
    if cells_path == agg_path {
        return Err(CliError::config("cells_csv and aggregates_csv must differ"));
    }
    create_dir(&args.out)?;

    println!(
        "cells={} L_values={} seeds={} methods={} jobs={}",
        grid.n_cells(),
        grid.l_values.len(),
        grid.seeds.len(),
        grid.methods.len(),
        jobs
    );
    let table = run_experiment_with_progress(&grid, jobs, |cells| {
        let lines: Vec<String> = cells.iter().map(cell_line).collect();
        println!("{}", lines.join("\n"));
    })
    .map_err(CliError::from_runtime)?;

    write_atomic(&cells_path, |w| table.write_cells_csv(w))?;
    write_atomic(&agg_path, |w| table.write_aggregates_csv(w))?;

    for a in &table.aggregates {
        println!(
            "aggregate method={} L={} mean_rel_ll={} std_rel_ll={} n_seeds={}",
            a.method,
            fmt_sig(a.l, 10),
            fmt_sig(a.mean_rel_ll, 10),
            a.std_rel_ll.map_or_else(String::new, |v| fmt_sig(v, 10)),
            a.n_seeds
        );
    }
    let failed = table.failed_cells().count();
    println!(
        "finished {} cells ({} failed); wrote {} and {}",
        table.cells.len(),
        failed,
        cells_path.display(),
        agg_path.display()
    );
    if failed > 0 {
        return Err(CliError::runtime(format!("{failed} cell(s) failed")));
    }
    Ok(())
}

pub fn variance_report(args: VarianceArgs) -> CliResult {
    let cfg = RunConfigFile::load(args.config.as_deref())?;
    let clip = cfg.train_config(MethodId::NnDla)?.clip;
    let cvr_path = &args.model[0];
    let cvr_file = ModelFile::load(cvr_path)?;
    let f = cvr_file.cvr(cvr_path)?;
    let g = match args.model.get(1) {
        Some(path) => match ModelFile::load(path)? {
            ModelFile::Logistic(m) if m.is_propensity() => Some(m),
            _ => return Err(CliError::runtime(format!("{}: expected a propensity model", path.display()))),
        },
        None => None,
    };

    let data = load_dataset(&args.data)?.data;
    let gt = |e: dladf::Error| CliError::runtime(format!("{}: {e}", args.data.display()));
    let gamma = data.require_gamma_true().map_err(gt)?;
    let theta = data.require_theta_true().map_err(gt)?;
    let dim_err = |e: dladf::Error| CliError::runtime(e.to_string());

    let deltas_f = data
        .rows()
        .map(|x| f.logit(x).map(DeltaPair::from_logit))
        .collect::<dladf::Result<Vec<_>>>()
        .map_err(dim_err)?;
    let deltas_g = match &g {
        Some(g) => data
            .rows()
            .zip(&data.elapsed)
            .map(|(x, &e)| g.propensity_logit(x, e).map(DeltaPair::from_logit))
            .collect::<dladf::Result<Vec<_>>>()
            .map_err(dim_err)?,
        None => deltas_f.clone(),
    };

    let mut clip_theta = 0usize;
    let mut clip_gamma = 0usize;
    let theta_c: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let (v, hit) = clip.clamp(t);
            clip_theta += usize::from(hit);
            v
        })
        .collect();
    let gamma_c: Vec<f64> = gamma
        .iter()
        .map(|&c| {
            let (v, hit) = clip.clamp(c);
            clip_gamma += usize::from(hit);
            v
        })
        .collect();

    let v_ips = ips_variance(gamma, &theta_c, &deltas_f).map_err(CliError::from_runtime)?;
    let v_icvr = icvr_variance(theta, &gamma_c, &deltas_g).map_err(CliError::from_runtime)?;
    let mean_theta = mean_propensity(&data).map_err(CliError::from_runtime)?;
    println!(
        "n={} mean_propensity={} ips_variance={} icvr_variance={} clip_theta={} clip_gamma={} icvr_model={}",
        data.len(),
        fmt_sig(mean_theta, 10),
        fmt_sig(v_ips, 10),
        fmt_sig(v_icvr, 10),
        clip_theta,
        clip_gamma,
        if g.is_some() { "propensity" } else { "cvr" }
    );
    println!(
        "IPS variance {} and ICVR variance {} over {} clicks ({} propensities and {} CVRs raised to the clip floor)",
        fmt_sig(v_ips, 4),
        fmt_sig(v_icvr, 4),
        data.len(),
        clip_theta,
        clip_gamma
    );
    Ok(())
}
