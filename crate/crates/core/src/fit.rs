//! Small Levenberg-Marquardt fits for the handful of Gaussian models used in
//! the analysis: source momentum widths, halo radial profiles and pair
//! correlation curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of a Gaussian fit `A exp(-(x - x0)^2 / (2 w^2))`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

/// Model selector for [`fit_gaussian`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussianModel {
    /// Amplitude and width free, center fixed at zero.
    CenteredAmpWidth,
    /// Amplitude, center and width all free.
    AmpCenterWidth,
    /// As `AmpCenterWidth` plus a straight-line background `b0 + b1 x`.
    AmpCenterWidthSlopedBackground,
}

fn model_dim(model: GaussianModel) -> usize {
    match model {
        GaussianModel::CenteredAmpWidth => 2,
        GaussianModel::AmpCenterWidth => 3,
        GaussianModel::AmpCenterWidthSlopedBackground => 5,
    }
}

/// Evaluate model and Jacobian row at `x` for parameter vector `p`.
fn eval(model: GaussianModel, p: &[f64], x: f64, jac: &mut [f64]) -> f64 {
    let (a, x0, w, b0, b1) = match model {
        GaussianModel::CenteredAmpWidth => (p[0], 0.0, p[1], 0.0, 0.0),
        GaussianModel::AmpCenterWidth => (p[0], p[1], p[2], 0.0, 0.0),
        GaussianModel::AmpCenterWidthSlopedBackground => (p[0], p[1], p[2], p[3], p[4]),
    };
    let u = x - x0;
    let g = (-u * u / (2.0 * w * w)).exp();
    let f = a * g + b0 + b1 * x;
    match model {
        GaussianModel::CenteredAmpWidth => {
            jac[0] = g;
            jac[1] = a * g * u * u / (w * w * w);
        }
        GaussianModel::AmpCenterWidth => {
            jac[0] = g;
            jac[1] = a * g * u / (w * w);
            jac[2] = a * g * u * u / (w * w * w);
        }
        GaussianModel::AmpCenterWidthSlopedBackground => {
            jac[0] = g;
            jac[1] = a * g * u / (w * w);
            jac[2] = a * g * u * u / (w * w * w);
            jac[3] = 1.0;
            jac[4] = x;
        }
    }
    f
}

fn solve_normal(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Weighted least-squares Gaussian fit via Levenberg-Marquardt.
///
/// `weights` defaults to uniform. Initial guesses come from the data moments;
/// `width` is kept positive by fitting its magnitude.
pub fn fit_gaussian(
    x: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    model: GaussianModel,
) -> Result<GaussianFit> {
    let dim = model_dim(model);
    if x.len() != y.len() {
        return Err(Error::FitFailure("x/y length mismatch".into()));
    }
    if x.len() < dim {
        return Err(Error::FitFailure(format!(
            "{} points cannot constrain {} parameters",
            x.len(),
            dim
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::FitFailure("non-finite input".into()));
    }

    // moment-based initialization
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let x_at_max = x[imax];
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(ymax > ymin) || (model != GaussianModel::AmpCenterWidthSlopedBackground && !(ymax > 0.0)) {
        return Err(Error::FitFailure("no signal above the baseline".into()));
    }
    let amp0 = ymax.max(1e-300);
    let wsum: f64 = y.iter().map(|v| (v - ymin).max(0.0)).sum();
    let width0 = if wsum > 0.0 {
        let mean: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| xi * (yi - ymin).max(0.0))
            .sum::<f64>()
            / wsum;
        let var: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| (xi - mean) * (xi - mean) * (yi - ymin).max(0.0))
            .sum::<f64>()
            / wsum;
        var.sqrt().max(1e-12 * span(x))
    } else {
        0.25 * span(x)
    };

    let mut p = match model {
        GaussianModel::CenteredAmpWidth => vec![amp0, width0],
        GaussianModel::AmpCenterWidth => vec![amp0, x_at_max, width0],
        GaussianModel::AmpCenterWidthSlopedBackground => {
            vec![amp0 - ymin, x_at_max, width0, ymin, 0.0]
        }
    };

    let uniform = vec![1.0; x.len()];
    let w = weights.unwrap_or(&uniform);
    let mut lambda = 1e-3;
    let mut chi2 = chi_square(model, &p, x, y, w);
    let mut jac = vec![0.0; dim];

    for _ in 0..200 {
        // build normal equations J^T W J and J^T W r
        let mut jtj = vec![vec![0.0; dim]; dim];
        let mut jtr = vec![0.0; dim];
        for i in 0..x.len() {
            let f = eval(model, &p, x[i], &mut jac);
            let r = y[i] - f;
            for a in 0..dim {
                jtr[a] += w[i] * jac[a] * r;
                for b in a..dim {
                    jtj[a][b] += w[i] * jac[a] * jac[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }
        let mut damped = jtj.clone();
        for a in 0..dim {
            damped[a][a] *= 1.0 + lambda;
        }
        let Some(step) = solve_normal(damped, jtr.clone()) else {
            return Err(Error::FitFailure("singular normal equations".into()));
        };
        let mut trial = p.clone();
        for a in 0..dim {
            trial[a] += step[a];
        }
        let trial_chi2 = chi_square(model, &trial, x, y, w);
        if trial_chi2.is_finite() && trial_chi2 <= chi2 {
            let rel_step: f64 = step
                .iter()
                .zip(&p)
                .map(|(s, v)| (s / v.abs().max(1e-30)).abs())
                .fold(0.0, f64::max);
            p = trial;
            chi2 = trial_chi2;
            lambda = (lambda * 0.3).max(1e-12);
            if rel_step < 1e-10 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    let fit = match model {
        GaussianModel::CenteredAmpWidth => GaussianFit {
            amplitude: p[0],
            center: 0.0,
            width: p[1].abs(),
        },
        GaussianModel::AmpCenterWidth | GaussianModel::AmpCenterWidthSlopedBackground => {
            GaussianFit {
                amplitude: p[0],
                center: p[1],
                width: p[2].abs(),
            }
        }
    };
    if !fit.amplitude.is_finite() || !fit.width.is_finite() || fit.width <= 0.0 {
        return Err(Error::FitFailure(format!(
            "degenerate result: amplitude {}, width {}",
            fit.amplitude, fit.width
        )));
    }
    Ok(fit)
}

fn span(x: &[f64]) -> f64 {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo).max(1e-300)
}

fn chi_square(model: GaussianModel, p: &[f64], x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut jac = vec![0.0; model_dim(model)];
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((xi, yi), wi)| {
            let r = yi - eval(model, p, *xi, &mut jac);
            wi * r * r
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_gaussian() {
        let x: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| 3.5 * (-(xi - 0.4) * (xi - 0.4) / (2.0 * 0.6 * 0.6)).exp())
            .collect();
        let fit = fit_gaussian(&x, &y, None, GaussianModel::AmpCenterWidth).unwrap();
        assert!((fit.amplitude - 3.5).abs() < 1e-8);
        assert!((fit.center - 0.4).abs() < 1e-8);
        assert!((fit.width - 0.6).abs() < 1e-8);
    }

    #[test]
    fn centered_model_from_few_points() {
        // sub-spacing width recovered from a 5-point stencil, as needed for
        // narrow source momentum profiles
        let sigma: f64 = 0.7;
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let y: Vec<f64> = x.iter().map(|&xi| (-xi * xi / (2.0 * sigma * sigma)).exp()).collect();
        let fit = fit_gaussian(&x, &y, None, GaussianModel::CenteredAmpWidth).unwrap();
        assert!((fit.width - sigma).abs() < 1e-9);
    }

    #[test]
    fn sloped_background_separated() {
        let x: Vec<f64> = (0..60).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| 2.0 * (-(xi - 1.5) * (xi - 1.5) / (2.0 * 0.2 * 0.2)).exp() + 0.3 - 0.1 * xi)
            .collect();
        let fit =
            fit_gaussian(&x, &y, None, GaussianModel::AmpCenterWidthSlopedBackground).unwrap();
        assert!((fit.amplitude - 2.0).abs() < 1e-6);
        assert!((fit.center - 1.5).abs() < 1e-6);
        assert!((fit.width - 0.2).abs() < 1e-6);
    }

    #[test]
    fn noisy_recovery_within_tolerance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (-30..=30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| {
                5.0 * (-xi * xi / (2.0 * 0.9 * 0.9)).exp() + 0.02 * (rng.random::<f64>() - 0.5)
            })
            .collect();
        let fit = fit_gaussian(&x, &y, None, GaussianModel::CenteredAmpWidth).unwrap();
        assert!((fit.amplitude - 5.0).abs() < 0.05);
        assert!((fit.width - 0.9).abs() < 0.02);
    }

    #[test]
    fn degenerate_input_is_an_error() {
        let x = [0.0, 1.0];
        let y = [1.0, 1.0];
        assert!(fit_gaussian(&x, &y, None, GaussianModel::AmpCenterWidth).is_err());
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.0, 0.0, 0.0, 0.0];
        assert!(fit_gaussian(&x, &y, None, GaussianModel::AmpCenterWidth).is_err());
    }
}
