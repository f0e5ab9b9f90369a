//! Efficient frontiers, opportunity-set geometry, and out-of-sample fit.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::ReturnsMatrix;
use crate::mv_optimizer::{lambda_portfolio, markowitz_portfolio, ObjectiveParams, Portfolio};
use crate::risk_models::{mean_returns, RiskModel};

pub const DEFAULT_FRONTIER_POINTS: usize = 40;
pub const DEFAULT_CURVE_POINTS: usize = 30;
pub const DEFAULT_CLOUD_SIZE: usize = 10_000;

/// Fraction trimmed from both ends of the `[min mu, max mu]` target range.
const RANGE_TRIM: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    /// Target return or lambda that produced the point.
    pub parameter: f64,
    pub risk: f64,
    pub expected_return: f64,
    pub portfolio: Portfolio,
}

impl FrontierPoint {
    fn new(parameter: f64, portfolio: Portfolio) -> Self {
        Self {
            parameter,
            risk: portfolio.risk,
            expected_return: portfolio.expected_return,
            portfolio,
        }
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s).round() / s
}

/// `n` equally spaced values from `lo` to `hi`, rounded to 6 decimals.
fn sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| round_to(lo + step * i as f64, 6)).collect()
}

fn check_points(n_points: usize) -> Result<()> {
    if n_points < 2 {
        return Err(Error::InvalidParameter(format!(
            "a frontier needs at least 2 points, got {n_points}"
        )));
    }
    Ok(())
}

/// Upper end of the target range: `max mu - max mu * 0.005`.
fn trimmed_max(model: &RiskModel) -> f64 {
    let max = model.mu().max();
    max - max * RANGE_TRIM
}

/// Lower end of the target range: `min mu + |min mu| * 0.005`.
fn trimmed_min(model: &RiskModel) -> f64 {
    let min = model.mu().min();
    min + min.abs() * RANGE_TRIM
}

fn clamp_target(model: &RiskModel, t: f64) -> f64 {
    t.clamp(model.mu().min(), model.mu().max())
}

fn solve_all<F>(params: &[f64], solve: F) -> Result<Vec<FrontierPoint>>
where
    F: Fn(f64) -> Result<Portfolio> + Sync,
{
    let results: Vec<Result<FrontierPoint>> = params
        .par_iter()
        .map(|&p| solve(p).map(|pf| FrontierPoint::new(p, pf)))
        .collect();
    results.into_iter().collect()
}

/// Minimum-risk set traced by pinning the expected return at `n_points`
/// equally spaced targets across the trimmed range of asset means.
pub fn efficient_frontier(model: &RiskModel, n_points: usize) -> Result<Vec<FrontierPoint>> {
    check_points(n_points)?;
    if model.n_assets() < 2 {
        return Err(Error::InvalidParameter(
            "a frontier needs at least 2 assets".into(),
        ));
    }
    let targets: Vec<f64> = sweep(trimmed_min(model), trimmed_max(model), n_points)
        .into_iter()
        .map(|t| clamp_target(model, t))
        .collect();
    solve_all(&targets, |beta| {
        markowitz_portfolio(model, &ObjectiveParams::pinned(beta))
    })
}

/// Efficient branch traced by sweeping lambda uniformly over `[0, 1]`.
pub fn lambda_frontier(model: &RiskModel, n_points: usize) -> Result<Vec<FrontierPoint>> {
    check_points(n_points)?;
    if model.n_assets() < 2 {
        return Err(Error::InvalidParameter(
            "a frontier needs at least 2 assets".into(),
        ));
    }
    solve_all(&sweep(0.0, 1.0, n_points), |lambda| {
        lambda_portfolio(model, &ObjectiveParams::lambda(lambda))
    })
}

/// Lambda values used by frontier sweeps.
pub fn lambda_grid(n_points: usize) -> Result<Vec<f64>> {
    check_points(n_points)?;
    Ok(sweep(0.0, 1.0, n_points))
}

/// Two-asset opportunity set described by means, deviations and correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoAssetSet {
    pub mu: [f64; 2],
    pub sd: [f64; 2],
    pub rho: f64,
}

impl TwoAssetSet {
    pub fn from_matrix(mu: [f64; 2], sigma: [[f64; 2]; 2]) -> Self {
        let sd = [sigma[0][0].max(0.0).sqrt(), sigma[1][1].max(0.0).sqrt()];
        let denom = sd[0] * sd[1];
        let rho = if denom > 0.0 {
            (0.5 * (sigma[0][1] + sigma[1][0]) / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        Self { mu, sd, rho }
    }

    /// `(risk, return)` with weight `wa` on the first asset.
    ///
    /// The variance is written as a completed square around the nearer
    /// perfect-correlation case, so `rho = 1` gives a straight line and
    /// `rho = -1` reaches zero without cancellation.
    pub fn point(&self, wa: f64) -> (f64, f64) {
        let wb = 1.0 - wa;
        let (a, b) = (wa * self.sd[0], wb * self.sd[1]);
        let cross = 2.0 * wa * wb * self.sd[0] * self.sd[1];
        let var = if self.rho >= 0.0 {
            (a + b).powi(2) - cross * (1.0 - self.rho)
        } else {
            (a - b).powi(2) + cross * (1.0 + self.rho)
        };
        let ret = wa * self.mu[0] + wb * self.mu[1];
        (var.max(0.0).sqrt(), ret)
    }

    /// Points for `wa` swept uniformly from 0 to 1.
    pub fn curve(&self, n_points: usize) -> Vec<(f64, f64)> {
        if n_points == 1 {
            return vec![self.point(0.0)];
        }
        (0..n_points)
            .map(|i| self.point(i as f64 / (n_points - 1) as f64))
            .collect()
    }
}

/// Opportunity-set curve of a pair of assets.
pub fn two_asset_curve(mu: [f64; 2], sigma: [[f64; 2]; 2], n_points: usize) -> Vec<(f64, f64)> {
    TwoAssetSet::from_matrix(mu, sigma).curve(n_points)
}

/// Asset pair `(i, j)` with its `(risk, return)` curve.
pub type PairCurve = ((usize, usize), Vec<(f64, f64)>);

/// Curves for every asset pair `(i, j)`, `i < j`, of a model.
pub fn pairwise_curves(model: &RiskModel, n_points: usize) -> Vec<PairCurve> {
    let (mu, s) = (model.mu(), model.sigma());
    let n = model.n_assets();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let curve = two_asset_curve(
                [mu[i], mu[j]],
                [[s[(i, i)], s[(i, j)]], [s[(j, i)], s[(j, j)]]],
                n_points,
            );
            out.push(((i, j), curve));
        }
    }
    out
}

/// Sequential stick-breaking: each weight is uniform within the mass left
/// by its predecessors, the last takes the remainder, then the coordinates
/// are shuffled. Not uniform on the simplex.
pub fn stick_breaking_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    let mut w = vec![0.0; n];
    if n == 1 {
        w[0] = 1.0;
        return DVector::from_vec(w);
    }
    let mut used = 0.0;
    for j in 0..n {
        w[j] = if j == n - 1 {
            1.0 - used
        } else {
            rng.random_range(0.0..=1.0 - used)
        };
        used += w[j];
    }
    w.shuffle(rng);
    DVector::from_vec(w)
}

/// Random long-only portfolios `(risk, return)`, reproducible under `seed`.
pub fn random_portfolio_cloud(model: &RiskModel, count: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let w = stick_breaking_weights(model.n_assets(), &mut rng);
            (model.risk(&w), model.expected_return(&w))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPair {
    pub target: f64,
    /// In-sample expected return of the frontier portfolio.
    pub expected: f64,
    /// The same weights applied to out-of-sample mean returns.
    pub realized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub pairs: Vec<FitPair>,
    pub mean_error: f64,
    pub mean_underestimation_error: f64,
    /// Errors after annualizing expectations and realizations separately.
    pub annual_mean_error: f64,
    pub annual_mean_underestimation_error: f64,
}

fn error_summary(diffs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = diffs.clone().count() as f64;
    let mean_abs = diffs.clone().map(f64::abs).sum::<f64>() / n;
    let (sum, count) = diffs
        .filter(|d| *d > 0.0)
        .fold((0.0, 0usize), |(s, c), d| (s + d, c + 1));
    let under = if count == 0 { 0.0 } else { sum / count as f64 };
    (mean_abs, under)
}

/// Compares in-sample expected returns of frontier portfolios with what the
/// same weights earn on `out_of_sample` returns.
///
/// Targets run from the minimum-risk portfolio's return to the trimmed
/// maximum mean, each solved with the return as an inequality.
pub fn frontier_fit(
    model: &RiskModel,
    out_of_sample: &ReturnsMatrix,
    n_points: usize,
) -> Result<FitReport> {
    check_points(n_points)?;
    check_alignment(model.assets(), out_of_sample.assets())?;
    let realized_mu = mean_returns(out_of_sample);
    let start = markowitz_portfolio(model, &ObjectiveParams::min_risk())?.expected_return;
    let targets: Vec<f64> = sweep(start, trimmed_max(model), n_points)
        .into_iter()
        .map(|t| clamp_target(model, t))
        .collect();
    let points = solve_all(&targets, |beta| {
        markowitz_portfolio(model, &ObjectiveParams::target(beta))
    })?;
    let pairs: Vec<FitPair> = points
        .iter()
        .map(|p| FitPair {
            target: p.parameter,
            expected: p.expected_return,
            realized: p.portfolio.weights.dot(&realized_mu),
        })
        .collect();
    let conv = model.convention();
    let (mean_error, mean_underestimation_error) =
        error_summary(pairs.iter().map(|p| p.expected - p.realized));
    let (annual_mean_error, annual_mean_underestimation_error) = error_summary(
        pairs
            .iter()
            .map(|p| conv.annual_expectation(p.expected) - conv.annual_realized(p.realized)),
    );
    Ok(FitReport {
        pairs,
        mean_error,
        mean_underestimation_error,
        annual_mean_error,
        annual_mean_underestimation_error,
    })
}

pub(crate) fn check_alignment(expected: &[String], got: &[String]) -> Result<()> {
    if expected == got {
        return Ok(());
    }
    let mut notes = Vec::new();
    if expected.len() != got.len() {
        notes.push(format!("{} vs {} columns", expected.len(), got.len()));
    }
    for (i, (a, b)) in expected.iter().zip(got).enumerate() {
        if a != b {
            notes.push(format!("column {}: {a} vs {b}", i + 1));
        }
    }
    Err(Error::AssetAlignment(notes.join("; ")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk_models::{AnnualizationConvention, RiskKind};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn model3() -> RiskModel {
        RiskModel::new(
            vec!["A".into(), "B".into(), "C".into()],
            DVector::from_vec(vec![0.0008, 0.0015, 0.003]),
            DMatrix::from_row_slice(3, 3, &[1e-4, 2e-5, 1e-5, 2e-5, 2.5e-4, 3e-5, 1e-5, 3e-5, 9e-4]),
            RiskKind::Variance,
            0.0,
            AnnualizationConvention::default(),
        )
        .unwrap()
    }

    #[test]
    fn two_point_frontier_hits_range_ends() {
        let m = model3();
        let f = efficient_frontier(&m, 2).unwrap();
        assert_eq!(f.len(), 2);
        assert_abs_diff_eq!(f[0].parameter, 0.000804, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1].parameter, 0.002985, epsilon = 1e-12);
        assert!(f[0].portfolio.weights[0] > 0.99);
        assert!(f[1].portfolio.weights[2] > 0.98);
    }

    #[test]
    fn frontier_is_ordered_and_pinned() {
        let f = efficient_frontier(&model3(), DEFAULT_FRONTIER_POINTS).unwrap();
        assert_eq!(f.len(), 40);
        for w in f.windows(2) {
            assert!(w[0].parameter <= w[1].parameter);
            assert!(w[0].expected_return <= w[1].expected_return + 1e-12);
        }
        for p in &f {
            assert_abs_diff_eq!(p.expected_return, p.parameter, epsilon = 1e-10);
        }
    }

    #[test]
    fn lambda_frontier_endpoints() {
        let m = model3();
        let f = lambda_frontier(&m, 5).unwrap();
        let minvar = markowitz_portfolio(&m, &ObjectiveParams::min_risk()).unwrap();
        assert_abs_diff_eq!(f[0].risk, minvar.risk, epsilon = 1e-10);
        assert_eq!(f[4].portfolio.weights.as_slice(), &[0.0, 0.0, 1.0]);
        assert_eq!(
            f.iter().map(|p| p.parameter).collect::<Vec<_>>(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
    }

    #[test]
    fn curve_endpoints_and_perfect_correlation() {
        let curve = two_asset_curve([0.001, 0.002], [[4e-4, 6e-4], [6e-4, 9e-4]], 30);
        assert_eq!(curve.len(), 30);
        assert_eq!(curve[29], (0.02, 0.001));
        assert_abs_diff_eq!(curve[0].0, 0.03, epsilon = 1e-15);
        // rho = 1 makes risk linear in the weight
        for (s, r) in &curve {
            let w = (r - 0.002) / (0.001 - 0.002);
            assert_abs_diff_eq!(*s, w * 0.02 + (1.0 - w) * 0.03, epsilon = 1e-12);
        }
    }

    #[test]
    fn negative_correlation_reaches_zero_risk() {
        let set = TwoAssetSet {
            mu: [0.001, 0.002],
            sd: [0.02, 0.03],
            rho: -1.0,
        };
        let w = 0.03 / (0.02 + 0.03);
        assert!(set.point(w).0 < 1e-12);
    }

    #[test]
    fn risk_nonincreasing_in_correlation() {
        for w in [0.1, 0.4, 0.7] {
            let mut last = f64::INFINITY;
            for rho in [1.0, 0.6, 0.2, -0.3, -1.0] {
                let s = TwoAssetSet { mu: [0.0, 0.0], sd: [0.02, 0.05], rho }.point(w).0;
                assert!(s <= last + 1e-15);
                last = s;
            }
        }
    }

    #[test]
    fn stick_breaking_on_simplex_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            let w = stick_breaking_weights(n, &mut rng);
            assert!((w.sum() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|x| *x >= 0.0));
        }
        let m = model3();
        assert_eq!(random_portfolio_cloud(&m, 100, 9), random_portfolio_cloud(&m, 100, 9));
        assert_ne!(random_portfolio_cloud(&m, 100, 9), random_portfolio_cloud(&m, 100, 10));
    }

    #[test]
    fn self_fit_has_zero_error() {
        let cols: Vec<Vec<f64>> = vec![
            vec![0.01, -0.02, 0.015, 0.0, 0.005],
            vec![0.03, -0.01, -0.02, 0.02, 0.01],
            vec![-0.01, 0.04, 0.0, 0.01, 0.02],
        ];
        let r = ReturnsMatrix::from_columns(&cols).unwrap();
        let m = crate::risk_models::build_risk_model(&r, RiskKind::Variance, 0.0, Default::default())
            .unwrap();
        let fit = frontier_fit(&m, &r, 10).unwrap();
        assert_eq!(fit.pairs.len(), 10);
        assert_eq!(fit.mean_error, 0.0);
        assert_eq!(fit.mean_underestimation_error, 0.0);
    }

    #[test]
    fn fit_rejects_misaligned_assets() {
        let m = model3();
        let r = ReturnsMatrix::new(
            vec!["A".into(), "C".into(), "B".into()],
            DMatrix::zeros(3, 3),
        )
        .unwrap();
        let err = frontier_fit(&m, &r, 5).unwrap_err();
        assert!(matches!(&err, Error::AssetAlignment(msg) if msg.contains("column 2")), "{err}");
    }
}
