//! Columnar training data and the JSON-Lines dataset file format.
//!
//! A dataset file starts with a header record
//! `{"config": {...}, "coefficients": {"w_cvr": [...], "w_expo": [...]}}`
//! followed by one record per click with keys `x, ts_click, d, e,
//! gamma_true, theta_true, y_true, o_true, y_obs`. Labels are written as
//! `0`/`1` and reals with 17 significant digits. When reading, only `x`, `e`
//! and `y_obs` are required and the header may be absent.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LabeledBatch;
use crate::synthgen::{Coefficients, SynthConfig, SyntheticDataset, TestSet};

/// Training clicks in column form; ground-truth columns are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    dim: usize,
    features: Vec<f64>,
    pub elapsed: Vec<f64>,
    pub y_obs: Vec<bool>,
    pub delay: Vec<Option<f64>>,
    pub y_true: Option<Vec<bool>>,
    pub o_true: Option<Vec<bool>>,
    pub gamma_true: Option<Vec<f64>>,
    pub theta_true: Option<Vec<f64>>,
}

impl TrainingData {
    pub fn len(&self) -> usize {
        self.y_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_obs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn batch(&self, indices: &[usize]) -> LabeledBatch<'_> {
        let pick_b = |col: &Vec<bool>| indices.iter().map(|&i| col[i]).collect::<Vec<_>>();
        LabeledBatch {
            features: indices.iter().map(|&i| self.row(i)).collect(),
            elapsed: indices.iter().map(|&i| self.elapsed[i]).collect(),
            y_obs: pick_b(&self.y_obs),
            y_true: self.y_true.as_ref().map(pick_b),
            o_true: self.o_true.as_ref().map(pick_b),
        }
    }

    pub fn require_y_true(&self) -> Result<&[bool]> {
        self.y_true.as_deref().ok_or(Error::UnavailableGroundTruth("y_true"))
    }

    pub fn require_theta_true(&self) -> Result<&[f64]> {
        self.theta_true.as_deref().ok_or(Error::UnavailableGroundTruth("theta_true"))
    }

    pub fn require_gamma_true(&self) -> Result<&[f64]> {
        self.gamma_true.as_deref().ok_or(Error::UnavailableGroundTruth("gamma_true"))
    }

    /// Delay of every observed conversion.
    pub fn require_delays(&self) -> Result<()> {
        match (0..self.len()).find(|&i| self.y_obs[i] && self.delay[i].is_none()) {
            Some(index) => Err(Error::MissingField { field: "d", index }),
            None => Ok(()),
        }
    }

    fn from_records(records: Vec<ClickRecord>) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::invalid("dataset has no records"))?;
        let dim = first.x.len();
        if dim == 0 {
            return Err(Error::invalid("feature vectors are empty"));
        }
        let n = records.len();
        let mut data = TrainingData {
            dim,
            features: Vec::with_capacity(n * dim),
            elapsed: Vec::with_capacity(n),
            y_obs: Vec::with_capacity(n),
            delay: Vec::with_capacity(n),
            y_true: Some(Vec::with_capacity(n)),
            o_true: Some(Vec::with_capacity(n)),
            gamma_true: Some(Vec::with_capacity(n)),
            theta_true: Some(Vec::with_capacity(n)),
        };
        fn push<T>(col: &mut Option<Vec<T>>, v: Option<T>) {
            match v {
                Some(v) => {
                    if let Some(c) = col.as_mut() {
                        c.push(v)
                    }
                }
                None => *col = None,
            }
        }
        for (i, r) in records.into_iter().enumerate() {
            if r.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.x.len(),
                });
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("record {i}: non-finite feature")));
            }
            if !(r.e >= 0.0 && r.e.is_finite()) {
                return Err(Error::invalid(format!("record {i}: elapsed time {} is invalid", r.e)));
            }
            let y_obs = label(r.y_obs, "y_obs", i)?;
            let y_true = r.y_true.map(|v| label(v, "y_true", i)).transpose()?;
            let o_true = r.o_true.map(|v| label(v, "o_true", i)).transpose()?;
            if y_obs && (y_true == Some(false) || o_true == Some(false)) {
                return Err(Error::invalid(format!("record {i}: y_obs = 1 contradicts y_true/o_true")));
            }
            if let Some(d) = r.d {
                if !(d >= 0.0) {
                    return Err(Error::invalid(format!("record {i}: negative delay {d}")));
                }
            }
            data.features.extend_from_slice(&r.x);
            data.elapsed.push(r.e);
            data.y_obs.push(y_obs);
            data.delay.push(r.d);
            push(&mut data.y_true, y_true);
            push(&mut data.o_true, o_true);
            push(&mut data.gamma_true, r.gamma_true);
            push(&mut data.theta_true, r.theta_true);
        }
        Ok(data)
    }
}

fn label(v: u8, field: &str, index: usize) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::invalid(format!("record {index}: {field} must be 0 or 1, got {v}"))),
    }
}

impl From<&SyntheticDataset> for TrainingData {
    fn from(ds: &SyntheticDataset) -> Self {
        let dim = ds.config.p;
        let s = &ds.samples;
        TrainingData {
            dim,
            features: s.iter().flat_map(|s| s.x.iter().copied()).collect(),
            elapsed: s.iter().map(|s| s.e).collect(),
            y_obs: s.iter().map(|s| s.y_obs).collect(),
            delay: s.iter().map(|s| Some(s.d)).collect(),
            y_true: Some(s.iter().map(|s| s.y_true).collect()),
            o_true: Some(s.iter().map(|s| s.o_true).collect()),
            gamma_true: Some(s.iter().map(|s| s.gamma_true).collect()),
            theta_true: Some(s.iter().map(|s| s.theta_true).collect()),
        }
    }
}

/// Test features and labels in column form.
#[derive(Debug, Clone, PartialEq)]
pub struct TestData {
    dim: usize,
    features: Vec<f64>,
    pub y_true: Vec<bool>,
}

impl TestData {
    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }
}

impl From<&TestSet> for TestData {
    fn from(t: &TestSet) -> Self {
        let dim = t.samples.first().map_or(0, |s| s.x.len());
        TestData {
            dim,
            features: t.samples.iter().flat_map(|s| s.x.iter().copied()).collect(),
            y_true: t.labels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub config: SynthConfig,
    pub coefficients: Coefficients,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClickRecord {
    x: Vec<f64>,
    e: f64,
    y_obs: u8,
    // accepted for completeness; nothing downstream reads click times
    #[serde(default)]
    #[allow(dead_code)]
    ts_click: Option<f64>,
    #[serde(default)]
    d: Option<f64>,
    #[serde(default)]
    gamma_true: Option<f64>,
    #[serde(default)]
    theta_true: Option<f64>,
    #[serde(default)]
    y_true: Option<u8>,
    #[serde(default)]
    o_true: Option<u8>,
}

/// Real formatted with 17 significant digits.
pub fn fmt_real17(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_real_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_real17(*v));
    }
    out.push(']');
}

/// Writes a generated dataset as JSON Lines.
pub fn write_dataset<W: Write>(ds: &SyntheticDataset, mut w: W) -> Result<()> {
    let mut line = String::with_capacity(1024);
    line.push_str("{\"config\":");
    line.push_str(&serde_json::to_string(&ds.config)?);
    line.push_str(",\"coefficients\":{\"w_cvr\":");
    push_real_array(&mut line, &ds.coefficients.w_cvr);
    line.push_str(",\"w_expo\":");
    push_real_array(&mut line, &ds.coefficients.w_expo);
    line.push_str("}}\n");
    w.write_all(line.as_bytes())?;
    for s in &ds.samples {
        line.clear();
        line.push_str("{\"x\":");
        push_real_array(&mut line, &s.x);
        let _ = writeln!(
            line,
            ",\"ts_click\":{},\"d\":{},\"e\":{},\"gamma_true\":{},\"theta_true\":{},\"y_true\":{},\"o_true\":{},\"y_obs\":{}}}",
            fmt_real17(s.ts_click),
            fmt_real17(s.d),
            fmt_real17(s.e),
            fmt_real17(s.gamma_true),
            fmt_real17(s.theta_true),
            u8::from(s.y_true),
            u8::from(s.o_true),
            u8::from(s.y_obs),
        );
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// A dataset file as read back: optional header plus columnar records.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub header: Option<DatasetHeader>,
    pub data: TrainingData,
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<LoadedDataset> {
    let mut header: Option<DatasetHeader> = None;
    let mut records = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if lineno == 0 && line.trim_start().starts_with("{\"config\"") {
            header = Some(serde_json::from_str(&line)?);
            continue;
        }
        let rec: ClickRecord = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    let data = TrainingData::from_records(records)?;
    if let Some(h) = &header {
        if h.config.p != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: h.config.p,
                got: data.dim(),
            });
        }
    }
    Ok(LoadedDataset { header, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate;

    fn tiny() -> SyntheticDataset {
        generate(&SynthConfig {
            n: 50,
            p: 4,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn file_round_trip_is_exact() {
        let ds = tiny();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 51);
        let loaded = read_dataset(buf.as_slice()).unwrap();
        let h = loaded.header.unwrap();
        assert_eq!(h.config, ds.config);
        assert_eq!(h.coefficients, ds.coefficients);
        assert_eq!(loaded.data, TrainingData::from(&ds));
    }

    #[test]
    fn minimal_records_leave_ground_truth_unavailable() {
        let text = "{\"x\":[0.1,0.2],\"e\":0.5,\"y_obs\":1}\n{\"x\":[0.3,0.4],\"e\":1.5,\"y_obs\":0,\"y_true\":1}\n";
        let loaded = read_dataset(text.as_bytes()).unwrap();
        assert!(loaded.header.is_none());
        let d = loaded.data;
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(1), &[0.3, 0.4]);
        assert!(matches!(d.require_y_true(), Err(Error::UnavailableGroundTruth("y_true"))));
        assert!(matches!(d.require_delays(), Err(Error::MissingField { field: "d", index: 0 })));
    }

    #[test]
    fn malformed_records_rejected() {
        for bad in [
            "{\"x\":[0.1],\"e\":-1.0,\"y_obs\":0}\n",
            "{\"x\":[0.1],\"e\":1.0,\"y_obs\":2}\n",
            "{\"x\":[0.1],\"e\":1.0,\"y_obs\":1,\"y_true\":0}\n",
            "{\"x\":[0.1],\"e\":1.0,\"y_obs\":0,\"extra\":3}\n",
            "{\"x\":[0.1],\"e\":1.0,\"y_obs\":0}\n{\"x\":[0.1,0.2],\"e\":1.0,\"y_obs\":0}\n",
            "",
        ] {
            assert!(read_dataset(bad.as_bytes()).is_err(), "{bad}");
        }
    }

    #[test]
    fn batch_gathers_rows() {
        let ds = tiny();
        let data = TrainingData::from(&ds);
        let b = data.batch(&[3, 0]);
        assert_eq!(b.features[0], &ds.samples[3].x[..]);
        assert_eq!(b.elapsed[1], ds.samples[0].e);
        assert_eq!(b.y_true.unwrap()[0], ds.samples[3].y_true);
    }

    #[test]
    fn real_formatting() {
        assert_eq!(fmt_real17(0.5), "5.0000000000000000e-1");
        let v = 0.1 + 0.2;
        assert_eq!(fmt_real17(v).parse::<f64>().unwrap(), v);
    }
}
