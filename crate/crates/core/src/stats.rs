//! Small numeric helpers: moments, percentiles and least squares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, 50.0)
}

/// Linear-interpolation percentile (`p` in 0..=100) of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LineFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Simple linear regression `y = intercept + slope * x` from the 2x2 normal equations.
pub fn fit_ols(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::validation("x and y lengths differ"));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("least squares needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        sx += xi;
        sy += yi;
        sxx += xi * xi;
        sxy += xi * yi;
    }
    // [n sx; sx sxx] [b0; b1] = [sy; sxy]
    let det = n * sxx - sx * sx;
    let spread = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        - x.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(spread > 0.0) || det.abs() <= 1e-14 * n * sxx {
        return Err(Error::Singular("all x values are equal".into()));
    }
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    Ok(LineFit { slope, intercept })
}

/// Multiple regression result; coefficient 0 is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
}

impl LeastSquares {
    pub fn predict(&self, regressors: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..].iter().zip(regressors).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Ordinary least squares with an intercept over the given regressor columns.
///
/// Regressors are centered before forming the normal equations; a Gram matrix
/// pivot that vanishes relative to its diagonal is reported as singular.
pub fn least_squares(columns: &[&[f64]], y: &[f64]) -> Result<LeastSquares> {
    let n = y.len();
    let p = columns.len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::validation("regressor length mismatch"));
    }
    if n < p + 2 {
        return Err(Error::InsufficientData(format!("{n} rows for {p} regressors")));
    }
    let nf = n as f64;
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;

    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let yc = y[i] - y_mean;
        for a in 0..p {
            let xa = columns[a][i] - means[a];
            rhs[a] += xa * yc;
            for b in a..p {
                gram[a][b] += xa * (columns[b][i] - means[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[a][b] = gram[b][a];
        }
        if !(gram[a][a] > 0.0) {
            return Err(Error::Singular(format!("regressor {a} is constant")));
        }
    }
    let inv = invert_spd(&gram)?;
    let slopes: Vec<f64> = (0..p).map(|a| (0..p).map(|b| inv[a][b] * rhs[b]).sum()).collect();
    let intercept = y_mean - slopes.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();

    let mut ssr = 0.0;
    let mut sst = 0.0;
    for i in 0..n {
        let fit = intercept + (0..p).map(|a| slopes[a] * columns[a][i]).sum::<f64>();
        ssr += (y[i] - fit).powi(2);
        sst += (y[i] - y_mean).powi(2);
    }
    let r_squared = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 1.0 };
    let sigma2 = ssr / (n - p - 1) as f64;

    let mut std_errors = Vec::with_capacity(p + 1);
    let quad: f64 = (0..p)
        .map(|a| (0..p).map(|b| means[a] * inv[a][b] * means[b]).sum::<f64>())
        .sum();
    std_errors.push((sigma2 * (1.0 / nf + quad)).max(0.0).sqrt());
    for a in 0..p {
        std_errors.push((sigma2 * inv[a][a]).max(0.0).sqrt());
    }
    let mut coefficients = vec![intercept];
    coefficients.extend(slopes);
    Ok(LeastSquares { coefficients, std_errors, r_squared, n })
}

/// Gauss-Jordan inverse of a symmetric positive (semi)definite matrix with
/// a relative pivot check, on the diagonally scaled system.
fn invert_spd(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = m.len();
    let scale: Vec<f64> = (0..p).map(|i| m[i][i].sqrt()).collect();
    let mut a: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| m[i][j] / (scale[i] * scale[j])).collect())
        .collect();
    let mut inv: Vec<Vec<f64>> =
        (0..p).map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("nonempty");
        if a[piv][col].abs() < 1e-10 {
            return Err(Error::Singular("regressors are collinear".into()));
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..p {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for row in 0..p {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for j in 0..p {
                        a[row][j] -= f * a[col][j];
                        inv[row][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    for i in 0..p {
        for j in 0..p {
            inv[i][j] /= scale[i] * scale[j];
        }
    }
    Ok(inv)
}
