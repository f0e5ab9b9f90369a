//! Integer share purchases with proportional transaction costs, lot sizes,
//! and residual cash invested at the risk-free rate.
//!
//! With capital `K`, lot price `p_i` (share price times lot size), buy and
//! sell cost rates `cb_i`, `cs_i`, horizon `T` and risk-free rate `Rf`:
//!
//! ```text
//!     Cb_i = n_i p_i cb_i
//!     Cs_i = n_i (p_i + T mu_i p_i) cs_i
//!     eps  = K - sum_i (n_i p_i + Cb_i)                      (>= 0)
//!     w_i  = n_i p_i / K
//!     Rp   = sum_i mu_i p_i n_i / K - sum_i Cs_i / (K T) + eps Rf / K
//!     F    = lambda Rp - (1 - lambda) w' S w
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk_models::RiskModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub capital: f64,
    /// Current price per share.
    pub prices: Vec<f64>,
    pub buy_cost_rates: Vec<f64>,
    pub sell_cost_rates: Vec<f64>,
    /// Per-period risk-free rate.
    pub risk_free_rate: f64,
    pub horizon: u32,
    pub lot_sizes: Vec<u64>,
}

impl MarketParams {
    /// Uniform costs, lot size 1.
    pub fn new(
        capital: f64,
        prices: Vec<f64>,
        cost_rate: f64,
        risk_free_rate: f64,
        horizon: u32,
    ) -> Result<Self> {
        let n = prices.len();
        let params = Self {
            capital,
            prices,
            buy_cost_rates: vec![cost_rate; n],
            sell_cost_rates: vec![cost_rate; n],
            risk_free_rate,
            horizon,
            lot_sizes: vec![1; n],
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_lot_sizes(mut self, lot_sizes: Vec<u64>) -> Result<Self> {
        self.lot_sizes = lot_sizes;
        self.validate()?;
        Ok(self)
    }

    pub fn n_assets(&self) -> usize {
        self.prices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.prices.len();
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if n == 0 {
            return bad("no prices".into());
        }
        if self.buy_cost_rates.len() != n
            || self.sell_cost_rates.len() != n
            || self.lot_sizes.len() != n
        {
            return Err(Error::Dimension(format!(
                "{n} prices but {} buy rates, {} sell rates, {} lot sizes",
                self.buy_cost_rates.len(),
                self.sell_cost_rates.len(),
                self.lot_sizes.len()
            )));
        }
        if !(self.capital.is_finite() && self.capital > 0.0) {
            return bad(format!("capital must be positive, got {}", self.capital));
        }
        if let Some(p) = self.prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return bad(format!("prices must be positive, got {p}"));
        }
        let rates = self.buy_cost_rates.iter().chain(&self.sell_cost_rates);
        if let Some(c) = rates.clone().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return bad(format!("cost rates must be non-negative, got {c}"));
        }
        if !self.risk_free_rate.is_finite() {
            return bad("risk-free rate must be finite".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one period".into());
        }
        if self.lot_sizes.contains(&0) {
            return bad("lot sizes must be at least 1".into());
        }
        Ok(())
    }

    /// Price of one tradable unit, `price * lot size`.
    pub fn lot_prices(&self) -> Vec<f64> {
        self.prices
            .iter()
            .zip(&self.lot_sizes)
            .map(|(p, l)| p * *l as f64)
            .collect()
    }

    /// Cost of one unit including the buy commission.
    pub fn unit_outlays(&self) -> Vec<f64> {
        self.lot_prices()
            .iter()
            .zip(&self.buy_cost_rates)
            .map(|(p, c)| p * (1.0 + c))
            .collect()
    }

    /// True when capital cannot buy even the cheapest unit.
    pub fn capital_below_cheapest_unit(&self) -> bool {
        self.unit_outlays()
            .iter()
            .all(|&o| o > self.capital)
    }

    /// Largest unit count used by the integer mutation draw: `floor(K / min p)`.
    pub fn max_units(&self) -> u64 {
        let min = self.lot_prices().into_iter().fold(f64::INFINITY, f64::min);
        (self.capital / min).floor() as u64
    }

    /// Same problem with lots folded into the prices (lot size 1).
    pub fn with_lots_as_prices(&self) -> Self {
        Self {
            prices: self.lot_prices(),
            lot_sizes: vec![1; self.n_assets()],
            ..self.clone()
        }
    }

    pub fn load(path: impl AsRef<Path>, n_assets: usize, prices: Vec<f64>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: MarketConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.resolve(n_assets, prices)
    }
}

/// A scalar applied to every asset, or one value per asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAsset<T> {
    Scalar(T),
    Each(Vec<T>),
}

impl<T: Clone> PerAsset<T> {
    pub fn expand(&self, n: usize, what: &str) -> Result<Vec<T>> {
        match self {
            PerAsset::Scalar(v) => Ok(vec![v.clone(); n]),
            PerAsset::Each(v) if v.len() == n => Ok(v.clone()),
            PerAsset::Each(v) => Err(Error::Dimension(format!(
                "{what}: {} values for {n} assets",
                v.len()
            ))),
        }
    }
}

/// Structured-text market configuration; prices come from a price file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub capital: f64,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default)]
    pub risk_free_rate: f64,
    #[serde(default = "zero_rate")]
    pub buy_cost: PerAsset<f64>,
    #[serde(default = "zero_rate")]
    pub sell_cost: PerAsset<f64>,
    #[serde(default = "unit_lot")]
    pub lot_size: PerAsset<u64>,
}

fn default_horizon() -> u32 {
    1
}

fn zero_rate() -> PerAsset<f64> {
    PerAsset::Scalar(0.0)
}

fn unit_lot() -> PerAsset<u64> {
    PerAsset::Scalar(1)
}

impl MarketConfig {
    pub fn resolve(&self, n_assets: usize, prices: Vec<f64>) -> Result<MarketParams> {
        if prices.len() != n_assets {
            return Err(Error::Dimension(format!(
                "{} prices for {n_assets} assets",
                prices.len()
            )));
        }
        let params = MarketParams {
            capital: self.capital,
            prices,
            buy_cost_rates: self.buy_cost.expand(n_assets, "buy_cost")?,
            sell_cost_rates: self.sell_cost.expand(n_assets, "sell_cost")?,
            risk_free_rate: self.risk_free_rate,
            horizon: self.horizon,
            lot_sizes: self.lot_size.expand(n_assets, "lot_size")?,
        };
        params.validate()?;
        Ok(params)
    }
}

/// `Cb_i = n_i p_i cb_i`.
pub fn buy_cost(n: &[u64], params: &MarketParams) -> Vec<f64> {
    params
        .lot_prices()
        .iter()
        .zip(n)
        .zip(&params.buy_cost_rates)
        .map(|((p, &k), c)| k as f64 * p * c)
        .collect()
}

/// `Cs_i = n_i (p_i + T mu_i p_i) cs_i`, priced at the expected end value.
pub fn sell_cost(n: &[u64], mu: &DVector<f64>, params: &MarketParams) -> Vec<f64> {
    let t = f64::from(params.horizon);
    params
        .lot_prices()
        .iter()
        .enumerate()
        .map(|(i, p)| n[i] as f64 * (p + t * mu[i] * p) * params.sell_cost_rates[i])
        .collect()
}

/// Capital left after purchases and buy costs.
pub fn residual(n: &[u64], params: &MarketParams) -> f64 {
    let spent: f64 = params
        .lot_prices()
        .iter()
        .zip(n)
        .zip(&params.buy_cost_rates)
        .map(|((p, &k), c)| {
            let value = k as f64 * p;
            value + value * c
        })
        .sum();
    params.capital - spent
}

/// `w_i = n_i p_i / K`.
pub fn implied_weights(n: &[u64], params: &MarketParams) -> DVector<f64> {
    let lot = params.lot_prices();
    DVector::from_iterator(
        n.len(),
        n.iter().zip(&lot).map(|(&k, p)| k as f64 * p / params.capital),
    )
}

/// Per-period expected return net of amortized sell costs, plus interest on
/// the residual.
pub fn net_portfolio_return(n: &[u64], model: &RiskModel, params: &MarketParams) -> f64 {
    let k = params.capital;
    let mu = model.mu();
    let gross: f64 = params
        .lot_prices()
        .iter()
        .enumerate()
        .map(|(i, p)| mu[i] * p * n[i] as f64)
        .sum::<f64>()
        / k;
    let sell: f64 = sell_cost(n, mu, params).iter().sum();
    gross - sell / (k * f64::from(params.horizon)) + residual(n, params) * params.risk_free_rate / k
}

/// `lambda * Rp - (1 - lambda) * w' S w` for implied weights `w`.
pub fn fitness(n: &[u64], model: &RiskModel, params: &MarketParams, lambda: f64) -> f64 {
    let w = implied_weights(n, params);
    lambda * net_portfolio_return(n, model, params) - (1.0 - lambda) * model.variance(&w)
}

/// A fully evaluated integer portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerSolution {
    pub assets: Vec<String>,
    /// Units bought per asset, in lots.
    pub shares: Vec<u64>,
    pub implied_weights: Vec<f64>,
    pub residual: f64,
    pub expected_return: f64,
    pub risk: f64,
    pub fitness: f64,
}

impl IntegerSolution {
    pub fn evaluate(n: &[u64], model: &RiskModel, params: &MarketParams, lambda: f64) -> Self {
        let w = implied_weights(n, params);
        let expected_return = net_portfolio_return(n, model, params);
        let variance = model.variance(&w);
        Self {
            assets: model.assets().to_vec(),
            shares: n.to_vec(),
            implied_weights: w.iter().copied().collect(),
            residual: residual(n, params),
            expected_return,
            risk: variance.max(0.0).sqrt(),
            fitness: lambda * expected_return - (1.0 - lambda) * variance,
        }
    }

    /// Weights rounded to 4 decimals that exceed `threshold`.
    pub fn weight_view(&self, threshold: f64) -> BTreeMap<String, f64> {
        self.assets
            .iter()
            .zip(&self.implied_weights)
            .map(|(a, w)| (a.clone(), (w * 1e4).round() / 1e4))
            .filter(|(_, w)| *w > threshold)
            .collect()
    }

    /// Non-zero unit counts by asset.
    pub fn share_view(&self) -> BTreeMap<String, u64> {
        self.assets
            .iter()
            .zip(&self.shares)
            .filter(|(_, &n)| n > 0)
            .map(|(a, &n)| (a.clone(), n))
            .collect()
    }
}
