//! Small statistical helpers shared across modules.
//!
//! All reductions here are order-deterministic: parallel callers must hand
//! us per-path values in path order, and we sum them with a fixed chunked
//! scheme so the result is bit-identical regardless of worker count.

/// Chunk size for the deterministic pairwise-ish summation.
const SUM_CHUNK: usize = 4096;

/// Sum in fixed-size chunks, then sum the chunk totals in order.
///
/// The grouping depends only on the slice length, never on thread count,
/// so results are reproducible and slightly more accurate than a naive
/// left fold on long inputs.
pub fn chunked_sum(values: &[f64]) -> f64 {
    if values.len() <= SUM_CHUNK {
        return values.iter().sum();
    }
    values
        .chunks(SUM_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .sum()
}

/// Sample mean.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    chunked_sum(values) / values.len() as f64
}

/// Mean together with the standard error of the mean (sd / sqrt(n)).
///
/// Uses the unbiased sample variance; a single observation reports a zero
/// standard error.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    // Degenerate ensembles (deterministic integrands) report their value
    // exactly with a zero standard error.
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let m = mean(values);
    if n == 1 {
        return (m, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    let var = chunked_sum(&sq) / (n as f64 - 1.0);
    (m, (var / n as f64).sqrt())
}

/// Result of a straight-line least-squares fit.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the fit residuals (0 when there
    /// are no degrees of freedom left).
    pub slope_stderr: f64,
}

/// Ordinary least squares fit of `y = intercept + slope * x`.
///
/// Panics if the inputs differ in length or hold fewer than two points.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len(), "fit_line needs matching lengths");
    let n = xs.len();
    assert!(n >= 2, "fit_line needs at least two points");
    let nf = n as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        sxx += dx * dx;
        sxy += dx * (ys[i] - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let mut ssr = 0.0;
        for i in 0..n {
            let r = ys[i] - intercept - slope * xs[i];
            ssr += r * r;
        }
        (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LineFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// z-score of the difference of two estimates with independent-looking
/// standard errors; 0/0 is reported as 0.
pub fn z_score(lhs: f64, lhs_se: f64, rhs: f64, rhs_se: f64) -> f64 {
    let diff = (lhs - rhs).abs();
    let denom = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
    if denom == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / denom
    }
}
