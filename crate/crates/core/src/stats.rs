//! Standardization and correlation coefficients.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("column is constant")]
    ConstantColumn,
    #[error("columns differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("input is constant")]
    ConstantInput,
    #[error("input contains a non-finite value")]
    NonFinite,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n − 1) standard deviation, two-pass.
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// `(x − mean) / s` with the sample standard deviation.
pub fn z_standardize(xs: &[f64]) -> Result<Vec<f64>, StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFewValues { needed: 2, got: xs.len() });
    }
    check_finite(xs)?;
    let m = mean(xs);
    let s = sample_sd(xs);
    if s == 0.0 || xs.iter().all(|&x| x == xs[0]) {
        return Err(StatsError::ConstantColumn);
    }
    Ok(xs.iter().map(|x| (x - m) / s).collect())
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their average
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewValues { needed: 3, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    if x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
        return Err(StatsError::ConstantInput);
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    Ok(pearson_unchecked(x, y))
}

/// Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    Ok(pearson_unchecked(&mid_ranks(x), &mid_ranks(y)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub pearson_r: f64,
    pub spearman_rho: f64,
}

pub fn correlate(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    check_pair(x, y)?;
    Ok(Correlation {
        pearson_r: pearson_unchecked(x, y),
        spearman_rho: pearson_unchecked(&mid_ranks(x), &mid_ranks(y)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_examples() {
        assert_eq!(z_standardize(&[1.0, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(z_standardize(&[5.0, 5.0, 5.0]), Err(StatsError::ConstantColumn));
        assert_eq!(z_standardize(&[5.0]), Err(StatsError::TooFewValues { needed: 2, got: 1 }));
        assert_eq!(z_standardize(&[1.0, f64::NAN]), Err(StatsError::NonFinite));
    }

    #[test]
    fn correlation_examples() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = correlate(&x, &y).unwrap();
        assert!((c.pearson_r - 1.0).abs() < 1e-15);
        assert!((c.spearman_rho - 1.0).abs() < 1e-15);

        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 9.0 / 84f64.sqrt()).abs() < 1e-12);

        let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let c = correlate(&x, &e).unwrap();
        assert!((c.spearman_rho - 1.0).abs() < 1e-15);
        assert!(c.pearson_r < 1.0);
    }

    #[test]
    fn correlation_errors() {
        assert_eq!(correlate(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch(3, 2)));
        assert_eq!(correlate(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), Err(StatsError::ConstantInput));
        assert_eq!(correlate(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFewValues { needed: 3, got: 2 }));
    }

    #[test]
    fn ties_get_mid_ranks() {
        assert_eq!(mid_ranks(&[10.0, 20.0, 10.0, 30.0, 20.0, 20.0]), vec![1.5, 4.0, 1.5, 6.0, 4.0, 4.0]);
    }
}
