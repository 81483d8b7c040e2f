//! Sample statistics used by the simulator and experiment summaries.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Two-sided Student-t critical value at confidence `level`.
pub fn t_critical(df: usize, level: f64) -> f64 {
    let t = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
    t.inverse_cdf(0.5 + level / 2.0)
}

/// Half-width of the 95% confidence interval of the mean of independent samples.
pub fn ci95_half_width(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    t_critical(xs.len() - 1, 0.95) * sample_std(xs) / (xs.len() as f64).sqrt()
}

/// Means of `batches` contiguous equal-size batches; trailing samples that do
/// not fill a batch are dropped.
pub fn batch_means(xs: &[f64], batches: usize) -> Vec<f64> {
    let size = xs.len() / batches.max(1);
    if size == 0 {
        return Vec::new();
    }
    xs.chunks_exact(size).take(batches).map(mean).collect()
}

/// 95% half-width of the mean of a correlated series by the batch-means method.
pub fn batch_means_ci95(xs: &[f64], batches: usize) -> f64 {
    ci95_half_width(&batch_means(xs, batches))
}
