use super::{EnsembleError, PredictionMatrix};

pub const DEFAULT_BINS: usize = 20;

/// Relative spread below which a series counts as constant.
const CONSTANT_TOL: f64 = 1e-12;

/// Mean shifted by the first element, so equal inputs give that value exactly.
fn mean_of(mut values: impl Iterator<Item = f64>) -> f64 {
    let Some(first) = values.next() else {
        return f64::NAN;
    };
    let (sum, n) = values.fold((0.0, 1usize), |(s, n), v| (s + (v - first), n + 1));
    first + sum / n as f64
}

/// Columnwise mean over learners.
pub fn ensemble_mean(m: &PredictionMatrix) -> Vec<f64> {
    (0..m.num_molecules()).map(|j| mean_of(m.column(j))).collect()
}

/// Stacks learners of matrices that cover the same molecules.
pub fn ensemble_all(matrices: &[PredictionMatrix]) -> Result<PredictionMatrix, EnsembleError> {
    let first = matrices.first().ok_or(EnsembleError::EmptyMatrix)?;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for m in matrices {
        if m.indices != first.indices {
            return Err(EnsembleError::IndexMismatch);
        }
        labels.extend(m.learner_labels.iter().cloned());
        values.extend(m.values.iter().cloned());
    }
    PredictionMatrix::new(labels, values, first.indices.clone())
}

/// Columnwise sample standard deviation (divisor `L − 1`).
pub fn uncertainty_std(m: &PredictionMatrix) -> Result<Vec<f64>, EnsembleError> {
    let l = m.num_learners();
    if l < 2 {
        return Err(EnsembleError::TooFewLearners(l));
    }
    Ok((0..m.num_molecules())
        .map(|j| {
            let mu = mean_of(m.column(j));
            let ss: f64 = m.column(j).map(|v| (v - mu) * (v - mu)).sum();
            (ss / (l - 1) as f64).sqrt()
        })
        .collect())
}

fn is_constant(x: &[f64]) -> bool {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo <= CONSTANT_TOL * lo.abs().max(hi.abs()).max(1.0)
}

/// Pearson correlation; series constant up to rounding give `ZeroVariance`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EnsembleError> {
    if x.len() != y.len() {
        return Err(EnsembleError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 || is_constant(x) || is_constant(y) {
        return Err(EnsembleError::ZeroVariance);
    }
    let mx = mean_of(x.iter().copied());
    let my = mean_of(y.iter().copied());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    /// Absent for an empty bin.
    pub mean_uncertainty: Option<f64>,
    pub mean_abs_error: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub abs_error: Vec<f64>,
    /// Over raw per-molecule `(std, |error|)` pairs; absent on zero variance.
    pub pearson_raw: Option<f64>,
    /// Over the non-empty bins' `(mean_uncertainty, mean_abs_error)` pairs.
    pub pearson_binned: Option<f64>,
    pub bins: Vec<Bin>,
}

impl UncertaintyReport {
    pub fn zero_variance(&self) -> bool {
        self.pearson_raw.is_none()
    }
}

/// Equal-width bins over `[min std, max std]`, right-open except the last.
/// A constant `std` collapses to a single bin.
fn make_bins(std: &[f64], abs_error: &[f64], bins: usize) -> Vec<Bin> {
    let lo = std.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = std.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let nb = if is_constant(std) { 1 } else { bins.max(1) };
    let width = (hi - lo) / nb as f64;
    let mut sums = vec![(0.0, 0.0, 0usize); nb];
    for (&s, &e) in std.iter().zip(abs_error) {
        let k = if nb == 1 {
            0
        } else {
            (((s - lo) / width).floor() as usize).min(nb - 1)
        };
        sums[k].0 += s;
        sums[k].1 += e;
        sums[k].2 += 1;
    }
    sums.into_iter()
        .enumerate()
        .map(|(k, (su, se, count))| Bin {
            lower: lo + k as f64 * width,
            upper: if k + 1 == nb { hi } else { lo + (k + 1) as f64 * width },
            mean_uncertainty: (count > 0).then(|| su / count as f64),
            mean_abs_error: (count > 0).then(|| se / count as f64),
            count,
        })
        .collect()
}

/// The report from per-molecule ensemble means and spreads.
pub fn report_from_summary(
    mean: &[f64],
    std: &[f64],
    targets: &[f64],
    bins: usize,
) -> Result<UncertaintyReport, EnsembleError> {
    for other in [std.len(), targets.len()] {
        if other != mean.len() {
            return Err(EnsembleError::LengthMismatch {
                left: mean.len(),
                right: other,
            });
        }
    }
    if mean.is_empty() {
        return Err(EnsembleError::EmptyMatrix);
    }
    let abs_error: Vec<f64> = mean.iter().zip(targets).map(|(m, t)| (m - t).abs()).collect();
    let bins = make_bins(std, &abs_error, bins);
    let pearson_raw = pearson(std, &abs_error).ok();
    let (bu, be): (Vec<f64>, Vec<f64>) = bins
        .iter()
        .filter_map(|b| Some((b.mean_uncertainty?, b.mean_abs_error?)))
        .unzip();
    let pearson_binned = pearson(&bu, &be).ok();
    Ok(UncertaintyReport {
        mean: mean.to_vec(),
        std: std.to_vec(),
        abs_error,
        pearson_raw,
        pearson_binned,
        bins,
    })
}

pub fn error_vs_uncertainty(
    m: &PredictionMatrix,
    targets: &[f64],
    bins: usize,
) -> Result<UncertaintyReport, EnsembleError> {
    let std = uncertainty_std(m)?;
    report_from_summary(&ensemble_mean(m), &std, targets, bins)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeBound {
    pub ensemble_mae: f64,
    pub mean_individual_mae: f64,
    /// `ensemble_mae ≤ mean_individual_mae + 1e-12`.
    pub holds: bool,
}

fn mae(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

pub fn ensemble_mae_bound_check(
    m: &PredictionMatrix,
    targets: &[f64],
) -> Result<MaeBound, EnsembleError> {
    if targets.len() != m.num_molecules() {
        return Err(EnsembleError::LengthMismatch {
            left: m.num_molecules(),
            right: targets.len(),
        });
    }
    let ensemble_mae = mae(&ensemble_mean(m), targets);
    let mean_individual_mae =
        m.values.iter().map(|row| mae(row, targets)).sum::<f64>() / m.num_learners() as f64;
    Ok(MaeBound {
        ensemble_mae,
        mean_individual_mae,
        holds: ensemble_mae <= mean_individual_mae + 1e-12,
    })
}
