//! Summary statistics shared by calibration and validation.

/// Gini concentration index of non-negative values. Zero for an empty or
/// all-zero input.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n as f64 - 1.0) * x)
        .sum();
    weighted / (n as f64 * total)
}

/// Lorenz curve as (cumulative share of cells, cumulative share of value),
/// starting at (0, 0).
pub fn lorenz_curve(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    let n = sorted.len() as f64;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(sorted.len() + 1);
    out.push((0.0, 0.0));
    for (i, x) in sorted.iter().enumerate() {
        acc += x;
        let share = if total > 0.0 { acc / total } else { 0.0 };
        out.push(((i as f64 + 1.0) / n, share));
    }
    out
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sum of squared deviations from the mean.
pub fn total_sum_of_squares(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum()
}

/// False when all values are equal; the sum of squares alone can be a
/// rounding residue in that case.
pub fn has_variance(values: &[f64]) -> bool {
    values.iter().any(|v| *v != values[0])
}

pub fn sum_squared_error(observed: &[f64], fitted: &[f64]) -> f64 {
    observed.iter().zip(fitted).map(|(o, f)| (o - f).powi(2)).sum()
}

/// `1 - SSR/SST`; `None` when the observations have no variance.
pub fn r_squared(observed: &[f64], fitted: &[f64]) -> Option<f64> {
    let sst = total_sum_of_squares(observed);
    (has_variance(observed) && sst > 0.0).then(|| 1.0 - sum_squared_error(observed, fitted) / sst)
}

/// Degrees-of-freedom adjusted R² with `k` regressors besides the
/// intercept: `1 - [SSR/(n-k-1)] / [SST/(n-1)]`.
pub fn adjusted_r2(observed: &[f64], fitted: &[f64], k: usize) -> Option<f64> {
    let n = observed.len();
    if n <= k + 1 {
        return None;
    }
    let sst = total_sum_of_squares(observed);
    if !has_variance(observed) || sst <= 0.0 {
        return None;
    }
    let ssr = sum_squared_error(observed, fitted);
    Some(1.0 - (ssr / (n - k - 1) as f64) / (sst / (n - 1) as f64))
}

pub fn rmse(observed: &[f64], fitted: &[f64]) -> f64 {
    (sum_squared_error(observed, fitted) / observed.len() as f64).sqrt()
}

/// Median of a slice (NaN-free input); `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}
