//! Series post-processing and CSV/JSON emission.
//!
//! CSV files carry one header row with `time` first, floats in Rust's
//! shortest round-trip notation and no locale formatting, so identical data
//! always produces identical bytes.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::simulator::RunRecord;

/// Exponential low-pass filter `y_t = (1-α)·y_{t-1} + α·x_t`, `y_0 = x_0`.
/// NaN inputs hold the previous output.
pub fn smooth(series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param(format!("smoothing factor must be in (0, 1], got {alpha}")));
    }
    if series.is_empty() {
        return Err(Error::param("cannot smooth an empty series"));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut y = series[0];
    for &x in series {
        if y.is_nan() {
            y = x;
        } else if !x.is_nan() {
            y = (1.0 - alpha) * y + alpha * x;
        }
        out.push(y);
    }
    Ok(out)
}

/// Mean of the trailing `⌈fraction·len⌉` samples.
pub fn tail_mean(series: &[f64], fraction: f64) -> Result<f64> {
    let tail = tail(series, fraction)?;
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

pub(crate) fn tail(series: &[f64], fraction: f64) -> Result<&[f64]> {
    if series.is_empty() {
        return Err(Error::param("empty series"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let count = ((fraction * series.len() as f64).ceil() as usize).clamp(1, series.len());
    Ok(&series[series.len() - count..])
}

/// `(max - min) / mean` of per-good values; zero when all are zero.
pub fn equalization_spread(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::param("spread needs at least two goods"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((hi - lo) / mean)
}

/// Where a bundle came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub seed: u64,
    pub origin: String,
}

/// Named columns sharing one time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBundle {
    pub columns: Vec<(String, Vec<f64>)>,
    pub provenance: Provenance,
}

impl SeriesBundle {
    pub fn new(time: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if time.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("time column must be strictly increasing"));
        }
        Ok(SeriesBundle {
            columns: vec![("time".to_string(), time)],
            provenance,
        })
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.rows() {
            return Err(Error::param(format!(
                "column {name} has {} rows, expected {}",
                values.len(),
                self.rows()
            )));
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.columns[0].1.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns.iter().map(|(n, _)| n.as_str()))?;
        let mut row = Vec::with_capacity(self.columns.len());
        for r in 0..self.rows() {
            row.clear();
            row.extend(self.columns.iter().map(|(_, v)| format_f64(v[r])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a CSV produced by [`SeriesBundle::write_csv`]. Provenance is
    /// not stored in CSV and must be supplied.
    pub fn read_csv<R: Read>(input: R, provenance: Provenance) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if names.first().map(String::as_str) != Some("time") {
            return Err(Error::param("first CSV column must be time"));
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for rec in r.records() {
            let rec = rec?;
            for (c, field) in cols.iter_mut().zip(rec.iter()) {
                c.push(parse_f64(field)?);
            }
        }
        let mut bundle = SeriesBundle::new(cols.remove(0), provenance)?;
        for (n, c) in names.into_iter().skip(1).zip(cols) {
            bundle.push(n, c)?;
        }
        Ok(bundle)
    }

    pub fn to_json(&self) -> Value {
        let mut cols = serde_json::Map::new();
        for (n, v) in &self.columns {
            cols.insert(n.clone(), json!(v.iter().map(|&x| finite_or_null(x)).collect::<Vec<_>>()));
        }
        json!({
            "provenance": self.provenance,
            "columns": Value::Object(cols),
        })
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::param(format!("bad number {s:?}: {e}")))
}

/// `<scenario>_<seed>_<kind>.csv`
pub fn artifact_name(scenario: &str, seed: u64, kind: &str, ext: &str) -> String {
    format!("{scenario}_{seed}_{kind}.{ext}")
}

pub fn run_bundle(rec: &RunRecord) -> Result<SeriesBundle> {
    let mut b = SeriesBundle::new(
        rec.times.clone(),
        Provenance {
            config_digest: rec.config_digest.clone(),
            seed: rec.seed,
            origin: "simulator".into(),
        },
    )?;
    b.push("rho", rec.rho.clone())?;
    for i in 0..rec.n_goods() {
        b.push(format!("n_{}", i + 1), rec.occupancy_f64(i))?;
    }
    for i in 0..rec.n_goods() {
        b.push(format!("pfail_{}", i + 1), rec.good_failure[i].clone())?;
    }
    b.push("pfail_system", rec.system_failure.clone())?;
    for (i, t) in rec.mean_tolerance.iter().enumerate() {
        b.push(format!("tol_{}", i + 1), t.clone())?;
    }
    if !rec.tolerance_sum_min.is_empty() {
        b.push("tolsum_min", rec.tolerance_sum_min.iter().map(|&v| v as f64).collect())?;
        b.push("tolsum_max", rec.tolerance_sum_max.iter().map(|&v| v as f64).collect())?;
    }
    Ok(b)
}

pub fn trajectory_bundle(traj: &Trajectory, provenance: Provenance) -> Result<SeriesBundle> {
    let mut b = SeriesBundle::new(traj.times.clone(), provenance)?;
    b.push("rho", traj.rhos.clone())?;
    for (i, s) in traj.good_series().into_iter().enumerate() {
        b.push(format!("n_{}", i + 1), s)?;
    }
    let n_types = traj.states.first().map_or(0, |s| s.n_types());
    if n_types > 1 {
        let n_goods = traj.states[0].n_goods();
        for i in 0..n_goods {
            for k in 0..n_types {
                b.push(format!("n_{}_{}", i + 1, k + 1), traj.states.iter().map(|s| s.get(i, k)).collect())?;
            }
        }
    }
    Ok(b)
}

pub fn write_csv_file(bundle: &SeriesBundle, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    bundle.write_csv(file)
}

pub fn write_json_file(value: &Value, path: &Path) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            config_digest: "abc".into(),
            seed: 7,
            origin: "test".into(),
        }
    }

    #[test]
    fn smoothing_cases() {
        assert_eq!(smooth(&[2.0; 5], 0.3).unwrap(), vec![2.0; 5]);
        assert_eq!(smooth(&[1.0, 5.0, -2.0], 1.0).unwrap(), vec![1.0, 5.0, -2.0]);
        assert!(smooth(&[1.0], 0.0).is_err());
        assert!(smooth(&[1.0], 1.5).is_err());
        assert!(smooth(&[], 0.5).is_err());
        let held = smooth(&[1.0, f64::NAN, 3.0], 0.5).unwrap();
        assert_eq!(held, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn step_response_matches_geometric_closed_form() {
        let alpha = 0.05;
        let mut step = vec![0.0];
        step.extend(std::iter::repeat(1.0).take(200));
        let y = smooth(&step, alpha).unwrap();
        for (t, v) in y.iter().enumerate() {
            let expected = 1.0 - (1.0 - alpha as f64).powi(t as i32);
            assert!((v - expected).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn tail_means() {
        assert_eq!(tail_mean(&[3.0; 10], 0.2).unwrap(), 3.0);
        let mut spike = vec![0.0; 9];
        spike.push(1.0);
        assert_eq!(tail_mean(&spike, 0.1).unwrap(), 1.0);
        assert!(tail_mean(&[], 0.5).is_err());
        let ramp: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        // ceil(0.1 * 101) = 11 samples: 0.90..=1.00.
        let direct: f64 = (90..=100).map(|i| i as f64 / 100.0).sum::<f64>() / 11.0;
        assert!((tail_mean(&ramp, 0.1).unwrap() - direct).abs() < 1e-15);
        let full = ramp.iter().sum::<f64>() / ramp.len() as f64;
        assert!((tail_mean(&ramp, 1.0).unwrap() - full).abs() < 1e-15);
    }

    #[test]
    fn spreads() {
        assert_eq!(equalization_spread(&[0.2, 0.2, 0.2]).unwrap(), 0.0);
        assert!((equalization_spread(&[0.1, 0.2, 0.3]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(equalization_spread(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(equalization_spread(&[0.5]).is_err());
    }

    #[test]
    fn bundle_validation() {
        assert!(SeriesBundle::new(vec![0.0, 0.0], prov()).is_err());
        let mut b = SeriesBundle::new(vec![0.0, 1.0], prov()).unwrap();
        assert!(b.push("x", vec![1.0]).is_err());
        b.push("x", vec![1.0, f64::NAN]).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,x\n0,1\n1,NaN\n");
        assert_eq!(b.to_json()["columns"]["x"], json!([1.0, null]));
    }
}
