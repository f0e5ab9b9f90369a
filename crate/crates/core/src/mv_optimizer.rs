//! Minimum-risk, target-return and lambda-tradeoff portfolios over the simplex.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{solve_qp, QuadraticProgram};
use crate::risk_models::{min_eigenvalue, RiskKind, RiskModel};

/// Diagonal shift applied to matrices that fail the positive-definite check.
pub const REGULARIZATION: f64 = 1e-11;

/// Eigenvalue floor of the positive-definite check.
pub const PD_EIGEN_FLOOR: f64 = 1e-12;

/// Decimals kept in reported weights for exact solvers.
pub const REPORT_DECIMALS: i32 = 4;

/// A long-only portfolio and its per-period statistics under one risk model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub assets: Vec<String>,
    pub weights: DVector<f64>,
    pub expected_return: f64,
    /// Standard deviation, or semideviation for semivariance models.
    pub risk: f64,
    pub kind: RiskKind,
}

impl Portfolio {
    pub fn from_weights(model: &RiskModel, weights: DVector<f64>) -> Self {
        Self {
            assets: model.assets().to_vec(),
            expected_return: model.expected_return(&weights),
            risk: model.risk(&weights),
            weights,
            kind: model.kind(),
        }
    }

    /// Weights rounded to `decimals`, keeping names whose rounded weight
    /// exceeds `threshold`.
    pub fn sparse_view(&self, decimals: i32, threshold: f64) -> BTreeMap<String, f64> {
        let scale = 10f64.powi(decimals);
        self.assets
            .iter()
            .zip(self.weights.iter())
            .map(|(a, w)| (a.clone(), (w * scale).round() / scale))
            .filter(|(_, w)| *w > threshold)
            .collect()
    }

    /// Reporting view of exact-solver results: 4 decimals, positive weights.
    pub fn reported_weights(&self) -> BTreeMap<String, f64> {
        self.sparse_view(REPORT_DECIMALS, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    pub target_return: Option<f64>,
    pub lambda: f64,
    /// Attain the target with equality, tracing the whole minimum-risk set.
    pub pin_return_equality: bool,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self {
            target_return: None,
            lambda: 0.0,
            pin_return_equality: false,
        }
    }
}

impl ObjectiveParams {
    pub fn min_risk() -> Self {
        Self::default()
    }

    pub fn target(beta: f64) -> Self {
        Self {
            target_return: Some(beta),
            ..Self::default()
        }
    }

    pub fn pinned(beta: f64) -> Self {
        Self {
            target_return: Some(beta),
            lambda: 0.0,
            pin_return_equality: true,
        }
    }

    pub fn lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }
}

/// Strict positive-definiteness test used ahead of the solver.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) > PD_EIGEN_FLOOR
}

/// Returns `m + 1e-11 I` when `m` is not positive definite, else `m`.
pub fn regularize(m: &DMatrix<f64>) -> DMatrix<f64> {
    if is_positive_definite(m) {
        m.clone()
    } else {
        m + DMatrix::identity(m.nrows(), m.ncols()) * REGULARIZATION
    }
}

/// Attainable range of expected returns, `[min mu, max mu]`.
pub fn return_range(model: &RiskModel) -> (f64, f64) {
    (model.mu().min(), model.mu().max())
}

fn clean_weights(mut w: DVector<f64>) -> DVector<f64> {
    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    w
}

/// Minimum-risk portfolio, optionally subject to an expected-return target.
pub fn markowitz_portfolio(model: &RiskModel, params: &ObjectiveParams) -> Result<Portfolio> {
    let n = model.n_assets();
    let mut qp = QuadraticProgram::new(regularize(model.sigma()), DVector::zeros(n));
    if let Some(beta) = params.target_return {
        let (min, max) = return_range(model);
        if !(min..=max).contains(&beta) {
            return Err(Error::TargetOutOfRange {
                target: beta,
                min,
                max,
            });
        }
        let row = DMatrix::from_row_slice(1, model.n_assets(), model.mu().as_slice());
        let rhs = DVector::from_element(1, beta);
        qp = if params.pin_return_equality {
            qp.with_equalities(row, rhs)
        } else {
            qp.with_inequalities(row, rhs)
        };
    }
    let sol = solve_qp(&qp.on_simplex()).map_err(|e| {
        Error::from(e).in_context(|| match params.target_return {
            Some(b) => format!("target return {b}"),
            None => "minimum risk".into(),
        })
    })?;
    Ok(Portfolio::from_weights(model, clean_weights(sol.x)))
}

/// Minimizes `(1 - lambda) w'Sw - lambda mu'w` over the simplex.
pub fn lambda_portfolio(model: &RiskModel, params: &ObjectiveParams) -> Result<Portfolio> {
    let lambda = params.lambda;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let n = model.n_assets();
    if lambda == 1.0 {
        // linear objective: the simplex vertex of largest mean, lowest index on ties
        let best = model
            .mu()
            .iter()
            .enumerate()
            .fold(0, |b, (i, &m)| if m > model.mu()[b] { i } else { b });
        let mut w = DVector::zeros(n);
        w[best] = 1.0;
        return Ok(Portfolio::from_weights(model, w));
    }
    let quad = regularize(&(model.sigma() * (2.0 * (1.0 - lambda))));
    let qp = QuadraticProgram::new(quad, model.mu() * lambda).on_simplex();
    let sol = solve_qp(&qp)
        .map_err(|e| Error::from(e).in_context(|| format!("lambda {lambda}")))?;
    Ok(Portfolio::from_weights(model, clean_weights(sol.x)))
}

/// `lambda * mu'w - (1 - lambda) * w'Sw`, the quantity maximized by the
/// lambda model.
pub fn lambda_objective(model: &RiskModel, weights: &DVector<f64>, lambda: f64) -> f64 {
    lambda * model.expected_return(weights) - (1.0 - lambda) * model.variance(weights)
}
