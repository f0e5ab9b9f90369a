//! Run configuration: a TOML file merged with command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use portsel::market_model::MarketConfig;
use portsel::risk_models::RiskKind;
use serde::Deserialize;

pub const CONFIG_ENV: &str = "PORTSEL_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskArg {
    Var,
    Svar,
}

impl From<RiskArg> for RiskKind {
    fn from(r: RiskArg) -> Self {
        match r {
            RiskArg::Var => RiskKind::Variance,
            RiskArg::Svar => RiskKind::Semivariance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaSection {
    pub enabled: Option<bool>,
    pub generations: Option<usize>,
    pub seed: Option<u64>,
    pub population: Option<usize>,
    pub mutation_rate: Option<f64>,
}

/// Contents of a config file; every field may be overridden by a flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub prices: Option<PathBuf>,
    pub prices_eval: Option<PathBuf>,
    pub risk: Option<RiskArg>,
    pub threshold_b: Option<f64>,
    pub target_return: Option<f64>,
    pub lambda: Option<f64>,
    pub points: Option<usize>,
    pub cloud: Option<usize>,
    pub pairs: Option<bool>,
    pub cost_ladder: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub delimiter: Option<char>,
    #[serde(default)]
    pub ga: GaSection,
    pub market: Option<MarketConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.prices, &mut cfg.prices_eval, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// In-sample price file.
    #[arg(long, global = true)]
    pub prices: Option<PathBuf>,
    /// Evaluation price file (out-of-sample fit, current prices for integer runs).
    #[arg(long, global = true)]
    pub prices_eval: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub risk: Option<RiskArg>,
    /// Semivariance benchmark return.
    #[arg(long, global = true)]
    pub threshold_b: Option<f64>,
    #[arg(long, global = true)]
    pub target_return: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Use the genetic algorithm.
    #[arg(long, global = true)]
    pub ga: bool,
    #[arg(long, global = true)]
    pub generations: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub population: Option<usize>,
    /// Capital; enables the integer market model.
    #[arg(long, global = true)]
    pub capital: Option<f64>,
    #[arg(long, global = true)]
    pub buy_cost: Option<f64>,
    #[arg(long, global = true)]
    pub sell_cost: Option<f64>,
    #[arg(long, global = true)]
    pub risk_free: Option<f64>,
    #[arg(long, global = true)]
    pub horizon: Option<u32>,
    #[arg(long, global = true)]
    pub lot_size: Option<u64>,
    /// Cost rates (buy and sell) for a GA frontier per level.
    #[arg(long, global = true, value_delimiter = ',')]
    pub cost_ladder: Option<Vec<f64>>,
    /// Random portfolios to sample next to the frontier.
    #[arg(long, global = true)]
    pub cloud: Option<usize>,
    /// Also write every two-asset opportunity curve.
    #[arg(long, global = true)]
    pub pairs: bool,
    #[arg(long, global = true)]
    pub points: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Field delimiter of price files.
    #[arg(long, global = true)]
    pub delimiter: Option<char>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub prices: Option<PathBuf>,
    pub prices_eval: Option<PathBuf>,
    pub risk: RiskKind,
    pub threshold_b: f64,
    pub target_return: Option<f64>,
    pub lambda: Option<f64>,
    pub ga: bool,
    pub generations: Option<usize>,
    pub seed: u64,
    pub population: Option<usize>,
    pub mutation_rate: Option<f64>,
    pub market: Option<MarketConfig>,
    pub cost_ladder: Option<Vec<f64>>,
    pub cloud: usize,
    pub pairs: bool,
    pub points: usize,
    pub out: PathBuf,
    pub format: Format,
    pub delimiter: u8,
}

impl Settings {
    pub fn resolve(flags: Flags) -> Result<Self, String> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let market = merge_market(file.market, &flags)?;
        let delimiter = flags.delimiter.or(file.delimiter).unwrap_or(',');
        if !delimiter.is_ascii() {
            return Err(format!("delimiter {delimiter:?} is not ASCII"));
        }
        Ok(Self {
            prices: flags.prices.or(file.prices),
            prices_eval: flags.prices_eval.or(file.prices_eval),
            risk: flags.risk.or(file.risk).map(Into::into).unwrap_or_default(),
            threshold_b: flags.threshold_b.or(file.threshold_b).unwrap_or(0.0),
            target_return: flags.target_return.or(file.target_return),
            lambda: flags.lambda.or(file.lambda),
            ga: flags.ga || file.ga.enabled.unwrap_or(false),
            generations: flags.generations.or(file.ga.generations),
            seed: flags.seed.or(file.ga.seed).unwrap_or(0),
            population: flags.population.or(file.ga.population),
            mutation_rate: file.ga.mutation_rate,
            market,
            cost_ladder: flags.cost_ladder.or(file.cost_ladder),
            cloud: flags.cloud.or(file.cloud).unwrap_or(0),
            pairs: flags.pairs || file.pairs.unwrap_or(false),
            points: flags.points.or(file.points).unwrap_or(40),
            out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            format: flags.format.or(file.format).unwrap_or_default(),
            delimiter: delimiter as u8,
        })
    }
}

fn merge_market(file: Option<MarketConfig>, flags: &Flags) -> Result<Option<MarketConfig>, String> {
    use portsel::market_model::PerAsset;
    let any_flag = flags.capital.is_some()
        || flags.buy_cost.is_some()
        || flags.sell_cost.is_some()
        || flags.risk_free.is_some()
        || flags.horizon.is_some()
        || flags.lot_size.is_some();
    let mut market = match (file, flags.capital) {
        (Some(m), _) => m,
        (None, Some(capital)) => MarketConfig {
            capital,
            horizon: 1,
            risk_free_rate: 0.0,
            buy_cost: PerAsset::Scalar(0.0),
            sell_cost: PerAsset::Scalar(0.0),
            lot_size: PerAsset::Scalar(1),
        },
        (None, None) if any_flag => {
            return Err("market flags given without --capital".into());
        }
        (None, None) => return Ok(None),
    };
    if let Some(v) = flags.capital {
        market.capital = v;
    }
    if let Some(v) = flags.buy_cost {
        market.buy_cost = PerAsset::Scalar(v);
    }
    if let Some(v) = flags.sell_cost {
        market.sell_cost = PerAsset::Scalar(v);
    }
    if let Some(v) = flags.risk_free {
        market.risk_free_rate = v;
    }
    if let Some(v) = flags.horizon {
        market.horizon = v;
    }
    if let Some(v) = flags.lot_size {
        market.lot_size = PerAsset::Scalar(v);
    }
    Ok(Some(market))
}
