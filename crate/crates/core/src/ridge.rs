//! Binary ridge classifier on standardized PPV features.
//!
//! Targets are ±1 (class 0 → −1, class 1 → +1) with an unpenalized
//! intercept. The regularization strength is chosen from a grid by exact
//! leave-one-out squared error, read off the hat-matrix diagonal:
//! `e_loo[i] = (y[i] - ŷ[i]) / (1 - H[i,i])`.
//!
//! One eigendecomposition serves the whole grid. When there are more
//! features than instances it is taken of the n×n Gram matrix `X Xᵀ`
//! (dual form), otherwise of the p×p matrix `Xᵀ X` (primal form).

use std::sync::Once;

use faer::linalg::matmul::matmul;
use faer::{Mat, MatRef, Parallelism, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::FeatureMatrix;

/// Columns with a standard deviation below this are left unscaled.
const DEGENERATE_SCALE: f64 = 1e-12;

/// 17 log-spaced values over [1e-3, 1e5].
pub fn default_alphas() -> Vec<f64> {
    (0..17).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect()
}

fn single_threaded_linalg() {
    static INIT: Once = Once::new();
    INIT.call_once(|| faer::set_global_parallelism(Parallelism::None));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    pub feature_ids: Vec<usize>,
    /// Per-column training mean and scale applied before the coefficients.
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    /// Labels mapped to targets −1 and +1 respectively.
    pub class_labels: [u8; 2],
}

/// Column statistics of a feature matrix.
#[derive(Debug, Clone)]
pub(crate) struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &FeatureMatrix) -> Self {
        let (n, p) = (features.n_instances(), features.n_features());
        let mut mean = vec![0.0; p];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; p];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd < DEGENERATE_SCALE {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, scale }
    }

    /// Column-major standardized copy of the listed columns.
    pub fn apply(&self, features: &FeatureMatrix, cols: &[usize]) -> Mat<f64> {
        let n = features.n_instances();
        let mut x = Mat::<f64>::zeros(n, cols.len());
        for i in 0..n {
            let row = features.row(i);
            for (k, &j) in cols.iter().enumerate() {
                x.write(i, k, (row[j] - self.mean[j]) / self.scale[j]);
            }
        }
        x
    }
}

pub(crate) fn targets(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

/// Ridge fit over an alpha grid on a standardized design.
pub(crate) struct RidgeSolution {
    pub alpha_index: usize,
    pub loo_errors: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

/// `x` is a centered n×p design; `gram`, when given, must equal `x xᵀ` and
/// is only used in the dual (p > n) regime.
pub(crate) fn solve_path(
    x: MatRef<'_, f64>,
    y: &[f64],
    alphas: &[f64],
    gram: Option<MatRef<'_, f64>>,
) -> Result<RidgeSolution> {
    single_threaded_linalg();
    let (n, p) = (x.nrows(), x.ncols());
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let inv_n = 1.0 / n as f64;

    // `left` holds an orthonormal basis of the column space of x in the
    // coordinates where the fit is diagonal: fitted values for alpha are
    // left * diag(shrink) * leftᵀ yc.
    let (left, eig, right): (Mat<f64>, Vec<f64>, Option<Mat<f64>>) = if p > n {
        let k = match gram {
            Some(g) => g.to_owned(),
            None => gram_rows(x),
        };
        let evd = k.selfadjoint_eigendecomposition(Side::Lower);
        let eig = (0..n).map(|i| evd.s().column_vector().read(i).max(0.0)).collect();
        (evd.u().to_owned(), eig, None)
    } else {
        let g = gram_cols(x);
        let evd = g.selfadjoint_eigendecomposition(Side::Lower);
        let eig: Vec<f64> = (0..p).map(|i| evd.s().column_vector().read(i).max(0.0)).collect();
        let v = evd.u().to_owned();
        let mut u = Mat::<f64>::zeros(n, p);
        matmul(u.as_mut(), x, v.as_ref(), None, 1.0, Parallelism::None);
        (u, eig, Some(v))
    };
    let r = eig.len();
    if left.ncols() != r || left.nrows() != n {
        return Err(Error::Invariant("eigenbasis has unexpected shape".into()));
    }

    // Projections of yc onto the basis.
    let proj: Vec<f64> = (0..r)
        .map(|k| (0..n).map(|i| left.read(i, k) * yc[i]).sum())
        .collect();

    let mut loo_errors = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        // Dual: basis vectors are unit, fitted shrink is λ/(λ+α).
        // Primal: basis is X V (norm² λ), fitted shrink is 1/(λ+α).
        let shrink: Vec<f64> = eig
            .iter()
            .map(|&l| if right.is_none() { l / (l + alpha) } else { 1.0 / (l + alpha) })
            .map(|s| if s.is_finite() { s } else { 0.0 })
            .collect();
        let mut err = 0.0;
        for i in 0..n {
            let mut fit = 0.0;
            let mut h = inv_n;
            for k in 0..r {
                let q = left.read(i, k);
                fit += q * shrink[k] * proj[k];
                h += q * q * shrink[k];
            }
            let e = (yc[i] - fit) / (1.0 - h);
            err += e * e;
        }
        let err = err / n as f64;
        loo_errors.push(if err.is_nan() { f64::INFINITY } else { err });
    }

    let alpha_index = argmin_first(&loo_errors).unwrap_or(alphas.len() - 1);
    let alpha = alphas[alpha_index];
    let coefficients: Vec<f64> = match &right {
        None => {
            // θ = xᵀ Q diag(1/(λ+α)) Qᵀ yc
            let dual: Vec<f64> = (0..n)
                .map(|i| {
                    (0..r)
                        .map(|k| left.read(i, k) * proj[k] / (eig[k] + alpha))
                        .sum()
                })
                .collect();
            (0..p)
                .map(|j| (0..n).map(|i| x.read(i, j) * dual[i]).sum())
                .collect()
        }
        Some(v) => {
            // θ = V diag(1/(λ+α)) Uᵀ yc, with U = x V.
            let w: Vec<f64> = (0..r).map(|k| proj[k] / (eig[k] + alpha)).collect();
            (0..p)
                .map(|j| (0..r).map(|k| v.read(j, k) * w[k]).sum())
                .collect()
        }
    };
    Ok(RidgeSolution {
        alpha_index,
        loo_errors,
        coefficients,
        intercept: y_mean,
    })
}

fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_finite() && best.map_or(true, |b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// `x xᵀ`.
pub(crate) fn gram_rows(x: MatRef<'_, f64>) -> Mat<f64> {
    let n = x.nrows();
    let mut k = Mat::<f64>::zeros(n, n);
    matmul(k.as_mut(), x, x.transpose(), None, 1.0, Parallelism::None);
    k
}

/// `xᵀ x`.
fn gram_cols(x: MatRef<'_, f64>) -> Mat<f64> {
    let p = x.ncols();
    let mut g = Mat::<f64>::zeros(p, p);
    matmul(g.as_mut(), x.transpose(), x, None, 1.0, Parallelism::None);
    g
}

fn check_inputs(features: &FeatureMatrix, labels: &[u8], alphas: &[f64]) -> Result<()> {
    if features.n_instances() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.n_instances(),
            labels.len()
        )));
    }
    if features.n_features() == 0 {
        return Err(Error::InvalidData("feature matrix has no columns".into()));
    }
    if labels.len() < 2 {
        return Err(Error::InvalidData("ridge needs at least two instances".into()));
    }
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::InvalidData("ridge needs both classes present".into()));
    }
    if alphas.is_empty() || alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
        return Err(Error::InvalidArgument(
            "alpha grid must be non-empty, finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Closed-form leave-one-out mean squared error for every alpha in the grid.
pub fn loo_errors(features: &FeatureMatrix, labels: &[u8], alphas: &[f64]) -> Result<Vec<f64>> {
    check_inputs(features, labels, alphas)?;
    let std = Standardizer::fit(features);
    let cols: Vec<usize> = (0..features.n_features()).collect();
    let x = std.apply(features, &cols);
    Ok(solve_path(x.as_ref(), &targets(labels), alphas, None)?.loo_errors)
}

/// Fits the classifier, picking the alpha with the lowest leave-one-out
/// error (first in grid order on ties).
pub fn fit_ridge(features: &FeatureMatrix, labels: &[u8], alphas: &[f64]) -> Result<RidgeModel> {
    check_inputs(features, labels, alphas)?;
    let std = Standardizer::fit(features);
    let cols: Vec<usize> = (0..features.n_features()).collect();
    let x = std.apply(features, &cols);
    let sol = solve_path(x.as_ref(), &targets(labels), alphas, None)?;
    Ok(RidgeModel {
        coefficients: sol.coefficients,
        intercept: sol.intercept,
        alpha: alphas[sol.alpha_index],
        feature_ids: features.feature_ids().to_vec(),
        feature_means: std.mean,
        feature_scales: std.scale,
        class_labels: [0, 1],
    })
}

impl RidgeModel {
    /// `θ · standardize(x) + intercept` per row; positive favors class 1.
    pub fn decision_function(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let cols = features.column_positions(&self.feature_ids)?;
        Ok((0..features.n_instances())
            .map(|i| {
                let row = features.row(i);
                let mut score = 0.0;
                for (k, &j) in cols.iter().enumerate() {
                    score += self.coefficients[k]
                        * ((row[j] - self.feature_means[k]) / self.feature_scales[k]);
                }
                score + self.intercept
            })
            .collect())
    }

    /// Scores of exactly zero go to the class mapped to +1.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<u8>> {
        Ok(self
            .decision_function(features)?
            .into_iter()
            .map(|s| self.label_for(s))
            .collect())
    }

    pub fn label_for(&self, score: f64) -> u8 {
        if score >= 0.0 {
            self.class_labels[1]
        } else {
            self.class_labels[0]
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    /// Coefficient vector followed by means and scales, for binary storage.
    pub(crate) fn to_block(&self) -> Vec<f64> {
        let mut block = Vec::with_capacity(1 + 3 * self.coefficients.len());
        block.push(self.intercept);
        block.extend_from_slice(&self.coefficients);
        block.extend_from_slice(&self.feature_means);
        block.extend_from_slice(&self.feature_scales);
        block
    }

    pub(crate) fn from_block(
        block: &[f64],
        alpha: f64,
        feature_ids: Vec<usize>,
        class_labels: [u8; 2],
    ) -> Result<Self> {
        let p = feature_ids.len();
        if block.len() != 1 + 3 * p {
            return Err(Error::Invariant(format!(
                "classifier block has {} values for {p} features",
                block.len()
            )));
        }
        Ok(Self {
            intercept: block[0],
            coefficients: block[1..1 + p].to_vec(),
            feature_means: block[1 + p..1 + 2 * p].to_vec(),
            feature_scales: block[1 + 2 * p..].to_vec(),
            alpha,
            feature_ids,
            class_labels,
        })
    }
}
