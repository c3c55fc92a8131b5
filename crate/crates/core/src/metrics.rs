//! Sample-set discrepancies and run summaries.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::sampler::RunRecord;

fn check_sets(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::Usage("sample sets must be non-empty".into()));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::Usage(format!("sample dimensions differ: {} vs {}", x.ncols(), y.ncols())));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Stack two point sets row-wise.
pub(crate) fn pooled(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(0), &[x, y]).expect("column counts checked")
}

/// Full symmetric matrix of squared Euclidean distances between rows.
pub(crate) fn pairwise_sq_distances(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&rows[i], &rows[j]);
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

/// Median of the off-diagonal pairwise distances.
pub fn median_pairwise_distance(points: ArrayView2<f64>) -> f64 {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdEstimate {
    /// `max(raw, 0)`.
    pub value: f64,
    /// Unbiased estimate; may be slightly negative.
    pub raw: f64,
    pub bandwidth: f64,
}

/// Unbiased squared MMD with kernel `exp(-|x-y|^2 / (2 h^2))`. Without an
/// explicit bandwidth `h`, the median pairwise distance of the pooled sample
/// is used.
pub fn mmd_rbf(x: ArrayView2<f64>, y: ArrayView2<f64>, bandwidth: Option<f64>) -> Result<MmdEstimate> {
    check_sets(x, y)?;
    let (n, m) = (x.nrows(), y.nrows());
    if n < 2 || m < 2 {
        return Err(Error::Usage("unbiased MMD needs at least two points per set".into()));
    }
    let h = match bandwidth {
        Some(h) => h,
        None => median_pairwise_distance(pooled(x, y).view()),
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Usage(format!("bandwidth must be positive, got {h}")));
    }
    let scale = -0.5 / (h * h);
    let xs: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let ys: Vec<Vec<f64>> = y.rows().into_iter().map(|r| r.to_vec()).collect();
    let within = |s: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                acc += (scale * sq_dist(&s[i], &s[j])).exp();
            }
        }
        2.0 * acc / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in &xs {
        for b in &ys {
            cross += (scale * sq_dist(a, b)).exp();
        }
    }
    let raw = within(&xs) + within(&ys) - 2.0 * cross / (n * m) as f64;
    Ok(MmdEstimate { value: raw.max(0.0), raw, bandwidth: h })
}

/// Iterations-to-threshold summary across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdStats {
    /// Per-run NFE at the first hit; `None` for censored runs.
    pub first_hits: Vec<Option<usize>>,
    /// Mean over uncensored runs; absent when nothing hit.
    pub mean_nfe: Option<f64>,
    pub success_rate: f64,
}

impl ThresholdStats {
    pub fn from_hits(first_hits: Vec<Option<usize>>) -> Self {
        let hits: Vec<usize> = first_hits.iter().flatten().copied().collect();
        let mean_nfe = (!hits.is_empty()).then(|| hits.iter().sum::<usize>() as f64 / hits.len() as f64);
        let success_rate = if first_hits.is_empty() { 0.0 } else { hits.len() as f64 / first_hits.len() as f64 };
        Self { first_hits, mean_nfe, success_rate }
    }
}

pub fn mean_iterations_to_threshold(records: &[RunRecord], threshold: f64) -> ThresholdStats {
    ThresholdStats::from_hits(records.iter().map(|r| r.chain.first_hit(threshold)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeProportions {
    /// Fraction of points assigned to each center.
    pub fractions: Vec<f64>,
    /// Fraction within no center's radius.
    pub leftover: f64,
}

/// Assign each point to the nearest center whose radius contains it.
pub fn mode_proportions(points: ArrayView2<f64>, centers: &[Vec<f64>], radii: &[f64]) -> Result<ModeProportions> {
    if centers.len() != radii.len() {
        return Err(Error::Usage(format!("{} centers but {} radii", centers.len(), radii.len())));
    }
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Usage(format!("radius must be positive, got {r}")));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != points.ncols()) {
        return Err(Error::Usage(format!("center {c:?} does not match point dimension {}", points.ncols())));
    }
    let mut counts = vec![0usize; centers.len()];
    for p in points.rows() {
        let p = p.to_vec();
        let nearest = centers
            .iter()
            .zip(radii)
            .enumerate()
            .map(|(k, (c, r))| (k, sq_dist(&p, c), r * r))
            .filter(|(_, d, r2)| d <= r2)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((k, _, _)) = nearest {
            counts[k] += 1;
        }
    }
    let n = points.nrows();
    if n == 0 {
        return Ok(ModeProportions { fractions: vec![0.0; centers.len()], leftover: 1.0 });
    }
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let covered: usize = counts.iter().sum();
    Ok(ModeProportions { fractions, leftover: (n - covered) as f64 / n as f64 })
}
