//! Return statistics and the risk models consumed by the optimizers.
//!
//! Variance models use the sample covariance (divisor `T - 1`). Semivariance
//! models use Estrada's exogenous semicovariance
//! `S_ij = (1/T) sum_t min(R_it - B, 0) * min(R_jt - B, 0)`, whose divisor is
//! `T`. The asymmetry is deliberate and matches the reference behavior.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::ReturnsMatrix;

/// Relative tolerance for the PSD check, scaled by the largest diagonal entry.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    #[default]
    Variance,
    Semivariance,
}

impl RiskKind {
    pub fn risk_label(self) -> &'static str {
        match self {
            RiskKind::Variance => "standard deviation",
            RiskKind::Semivariance => "semideviation",
        }
    }
}

/// Period counts used to turn per-period figures into yearly ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnualizationConvention {
    /// Multiplier for expected (in-sample) returns.
    pub expectation_periods: u32,
    /// Multiplier for realized returns over an evaluation year.
    pub evaluation_periods: u32,
}

impl Default for AnnualizationConvention {
    fn default() -> Self {
        Self {
            expectation_periods: 251,
            evaluation_periods: 250,
        }
    }
}

impl AnnualizationConvention {
    pub fn new(expectation_periods: u32, evaluation_periods: u32) -> Result<Self> {
        if expectation_periods == 0 || evaluation_periods == 0 {
            return Err(Error::InvalidParameter(
                "annualization period counts must be positive".into(),
            ));
        }
        Ok(Self {
            expectation_periods,
            evaluation_periods,
        })
    }

    pub fn annual_expectation(&self, per_period: f64) -> f64 {
        per_period * f64::from(self.expectation_periods)
    }

    pub fn annual_realized(&self, per_period: f64) -> f64 {
        per_period * f64::from(self.evaluation_periods)
    }

    /// Square-root-of-time scaling; display only.
    pub fn annual_risk(&self, per_period: f64) -> f64 {
        per_period * f64::from(self.expectation_periods).sqrt()
    }
}

pub fn mean_returns(returns: &ReturnsMatrix) -> DVector<f64> {
    let v = returns.values();
    let t = v.nrows() as f64;
    DVector::from_iterator(v.ncols(), v.column_iter().map(|c| c.sum() / t))
}

/// Sample covariance with divisor `T - 1`.
pub fn covariance(returns: &ReturnsMatrix) -> Result<DMatrix<f64>> {
    let v = returns.values();
    let t = v.nrows();
    if t < 2 {
        return Err(Error::InsufficientHistory { needed: 2, got: t });
    }
    let mu = mean_returns(returns);
    let centered = DMatrix::from_fn(t, v.ncols(), |r, c| v[(r, c)] - mu[c]);
    Ok(gram(&centered, (t - 1) as f64))
}

pub fn correlation(returns: &ReturnsMatrix) -> Result<DMatrix<f64>> {
    let cov = covariance(returns)?;
    let n = cov.nrows();
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    if let Some(i) = sd.iter().position(|&s| s <= 0.0) {
        return Err(Error::ZeroVariance(returns.assets()[i].clone()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    }))
}

/// Estrada's semicovariance matrix around threshold `b`.
pub fn semicovariance_estrada(returns: &ReturnsMatrix, b: f64) -> DMatrix<f64> {
    let v = returns.values();
    let t = v.nrows();
    let clipped = v.map(|r| (r - b).min(0.0));
    gram(&clipped, t as f64)
}

/// Portfolio semivariance measured on the realized portfolio return series:
/// mean over all periods of the squared shortfall below `b`.
pub fn semivariance_exact(returns: &ReturnsMatrix, weights: &DVector<f64>, b: f64) -> f64 {
    let series = returns.values() * weights;
    let shortfall = series.map(|r| (r - b).min(0.0));
    shortfall.dot(&shortfall) / series.len() as f64
}

/// `X'X / divisor`, each entry accumulated in period order.
fn gram(x: &DMatrix<f64>, divisor: f64) -> DMatrix<f64> {
    let n = x.ncols();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s = x.column(i).dot(&x.column(j)) / divisor;
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Mean vector and risk matrix for one risk measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RiskModelDocument", into = "RiskModelDocument")]
pub struct RiskModel {
    assets: Vec<String>,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    kind: RiskKind,
    threshold: f64,
    convention: AnnualizationConvention,
}

impl RiskModel {
    /// Symmetrizes `sigma` as `(S + S')/2` and checks it is PSD.
    pub fn new(
        assets: Vec<String>,
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        kind: RiskKind,
        threshold: f64,
        convention: AnnualizationConvention,
    ) -> Result<Self> {
        let n = assets.len();
        if n == 0 {
            return Err(Error::Dimension("risk model needs at least one asset".into()));
        }
        if mu.len() != n || sigma.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "{n} assets, mean vector of {}, risk matrix {:?}",
                mu.len(),
                sigma.shape()
            )));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite model entry".into()));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let max_diag = sigma.diagonal().max();
        let min_diag = sigma.diagonal().min();
        let min_eig = min_eigenvalue(&sigma);
        if min_diag < 0.0 || min_eig < -PSD_TOL * max_diag.max(0.0) {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min_eig,
            });
        }
        Ok(Self {
            assets,
            mu,
            sigma,
            kind,
            threshold,
            convention,
        })
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn kind(&self) -> RiskKind {
        self.kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn convention(&self) -> AnnualizationConvention {
        self.convention
    }

    /// Distinct entries of the symmetric risk matrix, `N(N+1)/2`.
    pub fn parameter_count(&self) -> usize {
        let n = self.n_assets();
        n * (n + 1) / 2
    }

    pub fn expected_return(&self, weights: &DVector<f64>) -> f64 {
        self.mu.dot(weights)
    }

    /// `w' S w`.
    pub fn variance(&self, weights: &DVector<f64>) -> f64 {
        weights.dot(&(&self.sigma * weights))
    }

    /// Square root of [`variance`](Self::variance), clamped at zero.
    pub fn risk(&self, weights: &DVector<f64>) -> f64 {
        self.variance(weights).max(0.0).sqrt()
    }

    /// Per-asset `(risk, mean)` pairs.
    pub fn dispersion(&self) -> Vec<(f64, f64)> {
        (0..self.n_assets())
            .map(|i| (self.sigma[(i, i)].max(0.0).sqrt(), self.mu[i]))
            .collect()
    }

    /// The sub-model restricted to asset indices `idx`.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let assets = idx.iter().map(|&i| self.assets[i].clone()).collect();
        let mu = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mu[i]));
        let sigma = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.sigma[(idx[a], idx[b])]);
        Self::new(assets, mu, sigma, self.kind, self.threshold, self.convention)
    }
}

pub fn build_risk_model(
    returns: &ReturnsMatrix,
    kind: RiskKind,
    threshold: f64,
    convention: AnnualizationConvention,
) -> Result<RiskModel> {
    if returns.periods() < 1 {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    let mu = mean_returns(returns);
    let sigma = match kind {
        RiskKind::Variance => covariance(returns)?,
        RiskKind::Semivariance => semicovariance_estrada(returns, threshold),
    };
    RiskModel::new(
        returns.assets().to_vec(),
        mu,
        sigma,
        kind,
        threshold,
        convention,
    )
}

/// On-disk form of a [`RiskModel`]; `sigma` is row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskModelDocument {
    pub assets: Vec<String>,
    pub kind: RiskKind,
    pub threshold: f64,
    pub convention: AnnualizationConvention,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl From<RiskModel> for RiskModelDocument {
    fn from(m: RiskModel) -> Self {
        Self {
            mu: m.mu.iter().copied().collect(),
            sigma: m
                .sigma
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            assets: m.assets,
            kind: m.kind,
            threshold: m.threshold,
            convention: m.convention,
        }
    }
}

impl TryFrom<RiskModelDocument> for RiskModel {
    type Error = Error;

    fn try_from(d: RiskModelDocument) -> Result<Self> {
        let n = d.assets.len();
        if d.sigma.len() != n || d.sigma.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("risk matrix rows".into()));
        }
        let sigma = DMatrix::from_fn(n, n, |i, j| d.sigma[i][j]);
        RiskModel::new(
            d.assets,
            DVector::from_vec(d.mu),
            sigma,
            d.kind,
            d.threshold,
            d.convention,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn returns(columns: &[Vec<f64>]) -> ReturnsMatrix {
        ReturnsMatrix::from_columns(columns).unwrap()
    }

    #[test]
    fn means() {
        let r = returns(&[vec![0.1, -0.1], vec![0.02, 0.02]]);
        let mu = mean_returns(&r);
        assert_abs_diff_eq!(mu[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mu[1], 0.02, epsilon = 1e-15);
    }

    #[test]
    fn covariance_hand_values() {
        let r = returns(&[vec![1.0, -0.5, 0.0], vec![-0.5, 1.0, 0.0]]);
        // means 1/6 each; hand evaluation with divisor T-1 = 2
        let c = covariance(&r).unwrap();
        let m = 1.0 / 6.0;
        let dx = [1.0 - m, -0.5 - m, -m];
        let dy = [-0.5 - m, 1.0 - m, -m];
        let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>() / 2.0;
        assert_abs_diff_eq!(c[(0, 1)], sxy, epsilon = 1e-15);
    }

    #[test]
    fn covariance_spec_example() {
        // returns must exceed -1, so use x = [0.5,-0.5,0] scaled by 2 in the comparison
        let r = returns(&[vec![0.5, -0.5, 0.0], vec![-0.5, 0.5, 0.0]]);
        let c = covariance(&r).unwrap() * 4.0;
        assert_abs_diff_eq!(c[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(1, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(0, 1)], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn covariance_degenerate_columns() {
        let r = returns(&[vec![0.01, 0.03, -0.02], vec![0.01, 0.03, -0.02], vec![0.25; 3]]);
        let c = covariance(&r).unwrap();
        assert_eq!(c[(0, 0)], c[(0, 1)]);
        assert_eq!(c[(0, 0)], c[(1, 1)]);
        for k in 0..3 {
            assert_eq!(c[(2, k)], 0.0);
            assert_eq!(c[(k, 2)], 0.0);
        }
        assert!(matches!(
            covariance(&returns(&[vec![0.1]])),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn correlation_signs_and_zero_variance() {
        let x = vec![0.01, -0.02, 0.03, 0.0];
        let c = correlation(&returns(&[
            x.clone(),
            x.iter().map(|v| 2.0 * v).collect(),
            x.iter().map(|v| -v).collect(),
        ]))
        .unwrap();
        assert_abs_diff_eq!(c[(0, 1)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[(0, 2)], -1.0, epsilon = 1e-12);
        let err = correlation(&returns(&[x, vec![0.0; 4]])).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance(a) if a == "A2"));
    }

    #[test]
    fn independent_columns_are_nearly_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cols: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..10_000).map(|_| rng.random_range(-0.05..0.05)).collect())
            .collect();
        let c = correlation(&returns(&cols)).unwrap();
        assert!(c[(0, 1)].abs() < 0.05);
    }

    #[test]
    fn estrada_examples() {
        let r = returns(&[vec![0.01, 0.02], vec![0.5, 0.3]]);
        assert_eq!(semicovariance_estrada(&r, 0.0), DMatrix::zeros(2, 2));
        // single asset [-1, 1] is not a valid return column; shift by B instead
        let r = returns(&[vec![-0.5, 1.5]]);
        let s = semicovariance_estrada(&r, 0.5);
        assert_abs_diff_eq!(s[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn single_asset_exact_equals_estrada() {
        let r = returns(&[vec![0.02, -0.01, 0.0, -0.03, 0.04]]);
        let w = DVector::from_element(1, 1.0);
        for b in [-0.02, 0.0, 0.01] {
            assert_eq!(semivariance_exact(&r, &w, b), semicovariance_estrada(&r, b)[(0, 0)]);
        }
        let above = returns(&[vec![0.02, 0.03]]);
        assert_eq!(semivariance_exact(&above, &w, 0.0), 0.0);
    }

    #[test]
    fn estrada_approximation_gap_on_three_assets() {
        // one common market factor plus idiosyncratic noise
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let market: Vec<f64> = (0..500).map(|_| rng.random_range(-0.02..0.02)).collect();
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                market
                    .iter()
                    .map(|m| 0.0005 * k as f64 + m + rng.random_range(-0.01..0.01))
                    .collect()
            })
            .collect();
        let r = returns(&cols);
        let w = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let exact = semivariance_exact(&r, &w, 0.0);
        let approx = w.dot(&(semicovariance_estrada(&r, 0.0) * &w));
        let gap = ((exact - approx) / exact).abs();
        assert!(gap < 0.25, "{exact} vs {approx}: relative gap {gap}");
    }

    #[test]
    fn build_dispatch_and_parameter_count() {
        let r = returns(&[vec![0.01, -0.02, 0.03], vec![0.0, 0.01, -0.01]]);
        let conv = AnnualizationConvention::default();
        let v = build_risk_model(&r, RiskKind::Variance, 0.0, conv).unwrap();
        assert_eq!(v.sigma(), &covariance(&r).unwrap());
        let s = build_risk_model(&r, RiskKind::Semivariance, 0.0, conv).unwrap();
        assert_eq!(s.sigma(), &semicovariance_estrada(&r, 0.0));
        assert_eq!(v.parameter_count(), 3);
        let big = RiskModel::new(
            (0..95).map(|i| i.to_string()).collect(),
            DVector::zeros(95),
            DMatrix::identity(95, 95),
            RiskKind::Variance,
            0.0,
            conv,
        )
        .unwrap();
        assert_eq!(big.parameter_count(), 4560);
    }

    #[test]
    fn model_rejects_indefinite_matrix() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = RiskModel::new(
            vec!["a".into(), "b".into()],
            DVector::zeros(2),
            sigma,
            RiskKind::Variance,
            0.0,
            AnnualizationConvention::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemidefinite { .. }));
    }

    #[test]
    fn document_round_trip() {
        let r = returns(&[vec![0.01, -0.02, 0.03], vec![0.0, 0.01, -0.01]]);
        let m = build_risk_model(&r, RiskKind::Semivariance, 0.001, Default::default()).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"semivariance\""));
        let back: RiskModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn variance_decomposition(
            cols in prop::collection::vec(prop::collection::vec(-0.1f64..0.1, 8), 2..5),
            raw_w in prop::collection::vec(0.0f64..1.0, 5),
        ) {
            let r = returns(&cols);
            let n = cols.len();
            let s = covariance(&r).unwrap();
            let w = DVector::from_iterator(n, raw_w.iter().take(n).copied());
            let quad = w.dot(&(&s * &w));
            let mut decomposed = 0.0;
            for i in 0..n {
                decomposed += w[i] * w[i] * s[(i, i)];
                for j in 0..n {
                    if i != j {
                        decomposed += w[i] * w[j] * s[(i, j)];
                    }
                }
            }
            prop_assert!((quad - decomposed).abs() < 1e-12);
        }

        #[test]
        fn correlation_reconstructs_covariance(
            cols in prop::collection::vec(prop::collection::vec(-0.1f64..0.1, 6), 2..5),
        ) {
            let r = returns(&cols);
            let s = covariance(&r).unwrap();
            if let Ok(c) = correlation(&r) {
                let n = cols.len();
                for i in 0..n {
                    for j in 0..n {
                        let rebuilt = c[(i, j)] * s[(i, i)].sqrt() * s[(j, j)].sqrt();
                        prop_assert!((rebuilt - s[(i, j)]).abs() < 1e-12);
                        prop_assert!(c[(i, j)].abs() <= 1.0);
                    }
                }
            }
        }

        #[test]
        fn estrada_is_psd(
            cols in prop::collection::vec(prop::collection::vec(-0.2f64..0.2, 1..30), 1..6),
            b in -0.05f64..0.05,
        ) {
            let t = cols.iter().map(Vec::len).min().unwrap();
            let cols: Vec<Vec<f64>> = cols.into_iter().map(|c| c[..t].to_vec()).collect();
            let s = semicovariance_estrada(&returns(&cols), b);
            let max_diag = s.diagonal().max();
            prop_assert!(min_eigenvalue(&s) >= -PSD_TOL * max_diag);
        }

        #[test]
        fn exact_semivariance_below_variance_at_mean(
            cols in prop::collection::vec(prop::collection::vec(-0.1f64..0.1, 10), 3),
            raw_w in prop::collection::vec(0.01f64..1.0, 3),
        ) {
            let r = returns(&cols);
            let total: f64 = raw_w.iter().sum();
            let w = DVector::from_iterator(3, raw_w.iter().map(|x| x / total));
            let series = r.values() * &w;
            let mean = series.mean();
            let var_t = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / series.len() as f64;
            prop_assert!(semivariance_exact(&r, &w, mean) <= var_t + 1e-15);
        }
    }
}
