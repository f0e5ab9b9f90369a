use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use portsel::frontier::{
    efficient_frontier, frontier_fit, lambda_frontier, random_portfolio_cloud, DEFAULT_FRONTIER_POINTS,
};
use portsel::market_data::ReturnsMatrix;
use portsel::market_model::{self, MarketParams};
use portsel::mv_optimizer::{markowitz_portfolio, return_range, ObjectiveParams};
use portsel::qp::{solve_qp, QuadraticProgram};
use portsel::risk_models::{build_risk_model, AnnualizationConvention, RiskKind, RiskModel};
use proptest::prelude::*;

fn diag_model(mu: &[f64], var: &[f64]) -> RiskModel {
    RiskModel::new(
        (0..mu.len()).map(|i| format!("A{i}")).collect(),
        DVector::from_row_slice(mu),
        DMatrix::from_diagonal(&DVector::from_row_slice(var)),
        RiskKind::Variance,
        0.0,
        AnnualizationConvention::default(),
    )
    .unwrap()
}

#[test]
fn two_asset_frontier_is_determined_by_the_return_constraint() {
    let (mu, var) = ([0.001, 0.003], [1e-4, 4e-4]);
    let model = diag_model(&mu, &var);
    for p in efficient_frontier(&model, DEFAULT_FRONTIER_POINTS).unwrap() {
        let wa = (p.parameter - mu[1]) / (mu[0] - mu[1]);
        let risk = (wa * wa * var[0] + (1.0 - wa).powi(2) * var[1]).sqrt();
        assert_abs_diff_eq!(p.risk, risk, epsilon = 1e-10);
        assert_abs_diff_eq!(p.expected_return, p.parameter, epsilon = 1e-12);
    }
}

#[test]
fn lambda_points_lie_on_the_target_frontier() {
    let model = RiskModel::new(
        vec!["A".into(), "B".into(), "C".into()],
        DVector::from_vec(vec![0.0008, 0.0015, 0.003]),
        DMatrix::from_row_slice(3, 3, &[1e-4, 2e-5, 1e-5, 2e-5, 2.5e-4, 3e-5, 1e-5, 3e-5, 9e-4]),
        RiskKind::Variance,
        0.0,
        AnnualizationConvention::default(),
    )
    .unwrap();
    let points = lambda_frontier(&model, 21).unwrap();
    for w in points.windows(2) {
        assert!(w[1].expected_return >= w[0].expected_return - 1e-12);
        assert!(w[1].risk >= w[0].risk - 1e-12);
    }
    let (lo, hi) = return_range(&model);
    for p in &points {
        let target = p.expected_return.clamp(lo, hi);
        let pinned = markowitz_portfolio(&model, &ObjectiveParams::pinned(target)).unwrap();
        assert_abs_diff_eq!(pinned.risk, p.risk, epsilon = 1e-7);
    }
}

#[test]
fn self_fit_has_zero_daily_error() {
    let cols = vec![
        vec![0.01, -0.02, 0.015, 0.003, -0.004, 0.02],
        vec![0.002, 0.001, -0.003, 0.004, 0.0, 0.001],
        vec![-0.01, 0.03, 0.0, -0.02, 0.025, 0.004],
    ];
    let r = ReturnsMatrix::from_columns(&cols).unwrap();
    let model = build_risk_model(&r, RiskKind::Semivariance, 0.0, AnnualizationConvention::default()).unwrap();
    let fit = frontier_fit(&model, &r, 10).unwrap();
    assert_eq!(fit.pairs.len(), 10);
    assert_abs_diff_eq!(fit.mean_error, 0.0, epsilon = 1e-18);
    assert_abs_diff_eq!(fit.mean_underestimation_error, 0.0, epsilon = 1e-18);
    // annual figures differ by one period of return: 251 e - 250 e = e
    let mean_expected = fit.pairs.iter().map(|p| p.expected.abs()).sum::<f64>() / 10.0;
    assert_abs_diff_eq!(fit.annual_mean_error, mean_expected, epsilon = 1e-15);
}

#[test]
fn fit_rejects_misaligned_assets() {
    let r = ReturnsMatrix::from_columns(&[vec![0.01, 0.02, -0.01], vec![0.0, 0.01, 0.02]]).unwrap();
    let model = build_risk_model(&r, RiskKind::Variance, 0.0, AnnualizationConvention::default()).unwrap();
    let other = ReturnsMatrix::new(
        vec!["A1".into(), "ZZ".into()],
        r.values().clone(),
    )
    .unwrap();
    let err = frontier_fit(&model, &other, 5).unwrap_err();
    assert!(err.to_string().contains("ZZ"), "{err}");
}

/// Enumerates every affordable unit vector of a 3-asset market.
fn lattice(market: &MarketParams) -> Vec<Vec<u64>> {
    let cap = |i: usize| (market.capital / market.unit_outlays()[i]).floor() as u64;
    let mut out = Vec::new();
    for a in 0..=cap(0) {
        for b in 0..=cap(1) {
            for c in 0..=cap(2) {
                out.push(vec![a, b, c]);
            }
        }
    }
    out.retain(|n| market_model::residual(n, market) >= 0.0);
    out
}

/// Best continuous fitness when weights may sum to less than one and the
/// remainder earns `rf`: the frictionless envelope of every integer holding.
fn cash_relaxation(model: &RiskModel, rf: f64, lambda: f64) -> f64 {
    let n = model.n_assets();
    let d = model.sigma() * (2.0 * (1.0 - lambda));
    let lin = (model.mu() - DVector::from_element(n, rf)) * lambda;
    let mut a = DMatrix::identity(n, n).insert_rows(n, 1, -1.0);
    a.row_mut(n).fill(-1.0);
    let mut b = DVector::zeros(n + 1);
    b[n] = -1.0;
    let sol = solve_qp(&QuadraticProgram::new(d, lin).with_inequalities(a, b)).unwrap();
    lambda * rf - sol.objective
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cloud_stays_inside_the_attainable_region(
        mu in prop::collection::vec(-0.002f64..0.003, 4),
        var in prop::collection::vec(1e-5f64..1e-3, 4),
        seed in 0u64..1000,
    ) {
        let model = diag_model(&mu, &var);
        let min_risk = markowitz_portfolio(&model, &ObjectiveParams::min_risk()).unwrap().risk;
        let (lo, hi) = mu.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
        for (risk, ret) in random_portfolio_cloud(&model, 500, seed) {
            prop_assert!(risk >= min_risk - 1e-12);
            prop_assert!(ret >= lo - 1e-15 && ret <= hi + 1e-15);
        }
    }

    #[test]
    fn integer_fitness_never_beats_the_cash_relaxation(
        mu in prop::collection::vec(0.0f64..0.2, 3),
        var in prop::collection::vec(0.01f64..0.1, 3),
        prices in prop::collection::vec(4.0f64..20.0, 3),
        rf in 0.0f64..0.05,
        lambda in 0.0f64..0.99,
    ) {
        let model = diag_model(&mu, &var);
        let market = MarketParams::new(60.0, prices, 0.0, rf, 1).unwrap();
        let bound = cash_relaxation(&model, rf, lambda);
        for n in lattice(&market) {
            prop_assert!(market_model::fitness(&n, &model, &market, lambda) <= bound + 1e-9);
        }
    }
}
