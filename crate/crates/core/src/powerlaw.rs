//! Power-law fitting of per-stage entropy profiles and comparison against
//! other curve families.
//!
//! `H = a · M^b` is fitted by ordinary least squares on `(log M, log H)`.
//! Goodness-of-fit numbers are reported in the linear domain, against the
//! predictions `a · M^b`.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub sse: f64,
    pub r_square: f64,
    pub adjusted_r_square: f64,
    /// `sqrt(sse / n)`.
    pub rmse: f64,
}

impl FitDiagnostics {
    /// Diagnostics of `predicted` against `observed` for a model with
    /// `num_params` free coefficients.
    pub fn compute(observed: &[f64], predicted: &[f64], num_params: usize) -> Self {
        let n = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / n;
        let sse: f64 = observed
            .iter()
            .zip(predicted)
            .map(|(y, p)| (y - p).powi(2))
            .sum();
        let sst: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
        let r_square = if sst > 0.0 {
            1.0 - sse / sst
        } else if sse <= f64::EPSILON * (1.0 + mean * mean) {
            1.0
        } else {
            0.0
        };
        let dof = observed.len().saturating_sub(num_params);
        let adjusted_r_square = if dof > 0 {
            1.0 - (1.0 - r_square) * (n - 1.0) / dof as f64
        } else {
            r_square
        };
        Self {
            sse,
            r_square,
            adjusted_r_square,
            rmse: (sse / n).sqrt(),
        }
    }
}

/// Result of fitting `H = a · M^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerFit {
    pub a: f64,
    pub b: f64,
    /// `a - b`.
    pub s_score: f64,
    /// Coefficient of determination of the regression in log-log space.
    pub log_r_square: f64,
    pub diagnostics: FitDiagnostics,
}

impl PowerFit {
    pub fn predict(&self, index: f64) -> f64 {
        self.a * index.powf(self.b)
    }
}

struct Line {
    intercept: f64,
    slope: f64,
    r_square: f64,
}

fn least_squares_line(x: &[f64], y: &[f64]) -> Line {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let r_square = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Line {
        intercept,
        slope,
        r_square,
    }
}

fn check_indices(values: &[f64], indices: &[f64], min_len: usize) -> Result<()> {
    if values.len() != indices.len() {
        return Err(Error::Degenerate(format!(
            "{} values but {} indices",
            values.len(),
            indices.len()
        )));
    }
    if values.len() < min_len {
        return Err(Error::Degenerate(format!(
            "need at least {min_len} points, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("values must be finite".into()));
    }
    if indices.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::Degenerate("indices must be positive".into()));
    }
    if indices.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Degenerate("indices must be strictly increasing".into()));
    }
    Ok(())
}

fn check_positive(values: &[f64]) -> Result<()> {
    match values.iter().find(|&&v| v <= 0.0) {
        Some(v) => Err(Error::Degenerate(format!("value {v} is not positive"))),
        None => Ok(()),
    }
}

/// Stage indices `1, 2, …, n`.
pub fn stage_indices(n: usize) -> Vec<f64> {
    (1..=n).map(|m| m as f64).collect()
}

pub fn fit_power(values: &[f64], indices: &[f64]) -> Result<PowerFit> {
    check_indices(values, indices, 2)?;
    check_positive(values)?;
    let log_x: Vec<f64> = indices.iter().map(|m| m.ln()).collect();
    let log_y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let line = least_squares_line(&log_x, &log_y);
    let (a, b) = (line.intercept.exp(), line.slope);
    let predicted: Vec<f64> = indices.iter().map(|m| a * m.powf(b)).collect();
    Ok(PowerFit {
        a,
        b,
        s_score: a - b,
        log_r_square: line.r_square,
        diagnostics: FitDiagnostics::compute(values, &predicted, 2),
    })
}

/// Curve families compared by [`fit_compare`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitFamily {
    Power,
    Linear,
    Quadratic,
    Exponential,
}

impl FitFamily {
    pub const ALL: [FitFamily; 4] = [
        FitFamily::Power,
        FitFamily::Linear,
        FitFamily::Quadratic,
        FitFamily::Exponential,
    ];

    pub fn num_params(self) -> usize {
        match self {
            FitFamily::Quadratic => 3,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FitFamily::Power => "power",
            FitFamily::Linear => "linear",
            FitFamily::Quadratic => "quadratic",
            FitFamily::Exponential => "exponential",
        }
    }
}

impl fmt::Display for FitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One family's fitted coefficients and diagnostics.
///
/// Coefficient layout: power `[a, b]` for `a·M^b`; linear `[c0, c1]`;
/// quadratic `[c0, c1, c2]` for `c0 + c1·M + c2·M²`; exponential `[A, B]` for
/// `A·exp(B·M)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyFit {
    pub family: FitFamily,
    pub coefficients: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

fn fit_polynomial(values: &[f64], indices: &[f64], degree: usize) -> FamilyFit {
    let n = indices.len() as f64;
    let center = indices.iter().sum::<f64>() / n;
    let terms = degree + 1;
    // normal equations in the centered variable
    let mut gram = vec![vec![0.0; terms + 1]; terms];
    for (x, y) in indices.iter().zip(values) {
        let dx = x - center;
        let powers: Vec<f64> = (0..terms).map(|p| dx.powi(p as i32)).collect();
        for r in 0..terms {
            for c in 0..terms {
                gram[r][c] += powers[r] * powers[c];
            }
            gram[r][terms] += powers[r] * y;
        }
    }
    let centered = solve(gram);
    let predicted: Vec<f64> = indices
        .iter()
        .map(|x| {
            let dx = x - center;
            centered.iter().rev().fold(0.0, |acc, c| acc * dx + c)
        })
        .collect();
    // expand back to powers of M
    let mut coefficients = vec![0.0; terms];
    for (p, c) in centered.iter().enumerate() {
        for q in 0..=p {
            coefficients[q] += c * binomial(p, q) * (-center).powi((p - q) as i32);
        }
    }
    let family = if degree == 1 {
        FitFamily::Linear
    } else {
        FitFamily::Quadratic
    };
    FamilyFit {
        family,
        coefficients,
        diagnostics: FitDiagnostics::compute(values, &predicted, terms),
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Gauss-Jordan elimination with partial pivoting on an augmented matrix.
fn solve(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let n = m.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .expect("non-empty");
        m.swap(col, pivot);
        let p = m[col][col];
        for j in col..=n {
            m[col][j] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for j in col..=n {
                        m[row][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|row| row[n]).collect()
}

fn fit_exponential(values: &[f64], indices: &[f64]) -> FamilyFit {
    let log_y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let line = least_squares_line(indices, &log_y);
    let amplitude = line.intercept.exp();
    let predicted: Vec<f64> = indices
        .iter()
        .map(|m| amplitude * (line.slope * m).exp())
        .collect();
    FamilyFit {
        family: FitFamily::Exponential,
        coefficients: vec![amplitude, line.slope],
        diagnostics: FitDiagnostics::compute(values, &predicted, 2),
    }
}

/// Fits all four families and ranks them by RMSE, best first.
///
/// RMSE values indistinguishable from an exact fit count as ties, broken in
/// favour of fewer parameters (so exact linear data ranks linear above the
/// quadratic that contains it).
pub fn fit_compare(values: &[f64], indices: &[f64]) -> Result<Vec<FamilyFit>> {
    check_indices(values, indices, 4)?;
    check_positive(values)?;
    let power = fit_power(values, indices)?;
    let mut fits = vec![
        FamilyFit {
            family: FitFamily::Power,
            coefficients: vec![power.a, power.b],
            diagnostics: power.diagnostics,
        },
        fit_polynomial(values, indices, 1),
        fit_polynomial(values, indices, 2),
        fit_exponential(values, indices),
    ];
    let scale = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
    let exact = 1e-9 * scale.max(1.0);
    let key = |f: &FamilyFit| {
        let r = f.diagnostics.rmse;
        if r <= exact {
            0.0
        } else {
            r
        }
    };
    fits.sort_by(|x, y| {
        key(x)
            .total_cmp(&key(y))
            .then(x.family.num_params().cmp(&y.family.num_params()))
            .then(x.family.cmp(&y.family))
    });
    Ok(fits)
}

/// `[a·1^b, a·2^b, …, a·n^b]`.
pub fn ideal_entropy_targets(fit: &PowerFit, num_stages: usize) -> Vec<f64> {
    (1..=num_stages).map(|m| fit.predict(m as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exact_power(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let m = stage_indices(n);
        (m.iter().map(|x| a * x.powf(b)).collect(), m)
    }

    #[test]
    fn recovers_exact_power_data() {
        let (v, m) = exact_power(2.0, 1.5, 4);
        let fit = fit_power(&v, &m).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-9 && (fit.b - 1.5).abs() < 1e-9);
        assert!(fit.diagnostics.sse <= 1e-18, "{}", fit.diagnostics.sse);
        assert_eq!(fit.s_score, fit.a - fit.b);
    }

    #[test]
    fn flat_sequence() {
        let fit = fit_power(&[5.0; 4], &stage_indices(4)).unwrap();
        assert!(fit.b.abs() < 1e-12);
        assert_relative_eq!(fit.a, 5.0, max_relative = 1e-12);
        assert_relative_eq!(fit.s_score, 5.0, max_relative = 1e-12);
        assert_eq!(fit.diagnostics.r_square, 1.0);
    }

    /// Brute-force minimizer of the log-domain SSE on a 1e-3 grid.
    fn grid_oracle(values: &[f64], indices: &[f64]) -> (f64, f64) {
        let log_m: Vec<f64> = indices.iter().map(|m| m.ln()).collect();
        let log_v: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for ai in 100..=10_000 {
            let a = ai as f64 * 1e-3;
            let la = a.ln();
            for bi in -2000..=2000 {
                let b = bi as f64 * 1e-3;
                let sse: f64 = log_m
                    .iter()
                    .zip(&log_v)
                    .map(|(lm, lv)| (lv - la - b * lm).powi(2))
                    .sum();
                if sse < best.0 {
                    best = (sse, a, b);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn matches_grid_search_oracle() {
        let values = [3.0, 4.1, 4.9, 5.6];
        let m = stage_indices(4);
        let (ga, gb) = grid_oracle(&values, &m);
        let fit = fit_power(&values, &m).unwrap();
        assert!((fit.a - ga).abs() <= 1e-3 + 1e-12, "a {} vs {}", fit.a, ga);
        assert!((fit.b - gb).abs() <= 1e-3 + 1e-12, "b {} vs {}", fit.b, gb);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_power(&[1.0], &[1.0]), Err(Error::Degenerate(_))));
        assert!(matches!(fit_power(&[1.0, 0.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(matches!(fit_power(&[1.0, 2.0], &[2.0, 1.0]), Err(Error::Degenerate(_))));
        assert!(matches!(fit_power(&[1.0, 2.0], &[1.0]), Err(Error::Degenerate(_))));
        let (v, m) = exact_power(1.0, 1.0, 3);
        assert!(matches!(fit_compare(&v, &m), Err(Error::Degenerate(_))));
    }

    #[test]
    fn two_point_fit() {
        let fit = fit_power(&[4.0, 8.0], &[1.0, 2.0]).unwrap();
        assert_relative_eq!(fit.a, 4.0, max_relative = 1e-12);
        assert_relative_eq!(fit.b, 1.0, max_relative = 1e-12);
        assert_relative_eq!(fit.s_score, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn generating_family_ranks_first() {
        let (v, m) = exact_power(2.0, 1.5, 5);
        let ranked = fit_compare(&v, &m).unwrap();
        assert_eq!(ranked[0].family, FitFamily::Power);
        assert!(ranked[0].diagnostics.sse <= 1e-18);

        let m = stage_indices(5);
        let linear: Vec<f64> = m.iter().map(|x| 3.0 * x + 1.0).collect();
        let ranked = fit_compare(&linear, &m).unwrap();
        assert_eq!(ranked[0].family, FitFamily::Linear);
        assert_relative_eq!(ranked[0].coefficients[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(ranked[0].coefficients[1], 3.0, epsilon = 1e-9);

        let quad: Vec<f64> = m.iter().map(|x| 2.0 * x * x - x + 4.0).collect();
        let ranked = fit_compare(&quad, &m).unwrap();
        assert_eq!(ranked[0].family, FitFamily::Quadratic);
        let c = &ranked[0].coefficients;
        assert_relative_eq!(c[0], 4.0, epsilon = 1e-9);
        assert_relative_eq!(c[1], -1.0, epsilon = 1e-9);
        assert_relative_eq!(c[2], 2.0, epsilon = 1e-9);

        let expo: Vec<f64> = m.iter().map(|x| 1.5 * (0.7 * x).exp()).collect();
        assert_eq!(fit_compare(&expo, &m).unwrap()[0].family, FitFamily::Exponential);
    }

    #[test]
    fn rmse_squared_times_n_is_sse() {
        let values = [3.0, 4.1, 4.9, 5.6, 7.3];
        for f in fit_compare(&values, &stage_indices(5)).unwrap() {
            let d = f.diagnostics;
            assert_relative_eq!(d.rmse * d.rmse * 5.0, d.sse, max_relative = 1e-12);
            assert!(d.r_square <= 1.0 && d.adjusted_r_square <= 1.0);
        }
    }

    #[test]
    fn targets() {
        let fit = |a: f64, b: f64| PowerFit {
            a,
            b,
            s_score: a - b,
            log_r_square: 1.0,
            diagnostics: FitDiagnostics::compute(&[1.0], &[1.0], 2),
        };
        assert_eq!(ideal_entropy_targets(&fit(2.0, 1.0), 3), vec![2.0, 4.0, 6.0]);
        assert_eq!(ideal_entropy_targets(&fit(1.0, 0.0), 4), vec![1.0; 4]);
        let t = ideal_entropy_targets(&fit(2.0, 1.5), 4);
        for (got, want) in t.iter().zip([2.0, 5.657, 10.392, 16.0]) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn log_r_square_is_one_on_exact_data() {
        let (v, m) = exact_power(3.0, 0.4, 6);
        assert_relative_eq!(fit_power(&v, &m).unwrap().log_r_square, 1.0, epsilon = 1e-12);
    }
}
