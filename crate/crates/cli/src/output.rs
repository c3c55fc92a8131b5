//! CSV writers. Every file starts with a header row and floats carry 17
//! significant digits so they parse back to the same bits.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use ndarray::ArrayView2;

/// Round-trip float formatting.
pub fn float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Point cloud with columns `x, y` in 2D and `x0, x1, ...` otherwise.
pub fn write_points(path: &Path, points: ArrayView2<f64>) -> Result<()> {
    let mut w = writer(path)?;
    let d = points.ncols();
    let header: Vec<String> = if d == 2 { vec!["x".into(), "y".into()] } else { (0..d).map(|k| format!("x{k}")).collect() };
    w.write_record(&header)?;
    for row in points.rows() {
        w.write_record(row.iter().map(|&v| float(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss(path: &Path, trace: &[(usize, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "loss"])?;
    for &(step, loss) in trace {
        w.write_record([step.to_string(), float(loss)])?;
    }
    w.flush()?;
    Ok(())
}

/// One metric of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    pub fn new(method: &str, metric: &str, value: f64) -> Self {
        Self { method: method.into(), metric: metric.into(), value }
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow], seed: u64, config_hash: &str) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "metric", "value", "seed", "config_hash"])?;
    for r in rows {
        w.write_record([r.method.as_str(), &r.metric, &float(r.value), &seed.to_string(), config_hash])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(float(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(float(f64::NAN), "NaN");
    }
}
