use std::path::{Path, PathBuf};

use portsel::frontier::{
    efficient_frontier, frontier_fit, pairwise_curves, random_portfolio_cloud, FrontierPoint,
    DEFAULT_CURVE_POINTS,
};
use portsel::ga::{ga_frontier, ga_lambda_n_portfolio, ga_lambda_portfolio, GaParams, GaTrace};
use portsel::io::{self, IntegerReport, PortfolioReport};
use portsel::market_data::{assets_return, load_prices, CsvFormat, PriceTable};
use portsel::market_model::{MarketParams, PerAsset};
use portsel::mv_optimizer::{lambda_portfolio, markowitz_portfolio, ObjectiveParams};
use portsel::risk_models::{build_risk_model, AnnualizationConvention, RiskModel};
use serde::Serialize;

use crate::config::{Format, Settings};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

struct Inputs {
    prices: PriceTable,
    model: RiskModel,
}

fn csv_format(s: &Settings) -> CsvFormat {
    CsvFormat {
        delimiter: s.delimiter,
        ..CsvFormat::default()
    }
}

fn load(s: &Settings) -> Result<Inputs> {
    let path = s
        .prices
        .as_ref()
        .ok_or_else(|| CliError::Config("no price file (--prices)".into()))?;
    let prices = load_prices(path, &csv_format(s))?;
    let returns = assets_return(&prices);
    let model = build_risk_model(&returns, s.risk, s.threshold_b, AnnualizationConvention::default())?;
    Ok(Inputs { prices, model })
}

fn out_path(s: &Settings, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&s.out).map_err(|e| CliError::Core(portsel::Error::Io {
        path: s.out.clone(),
        source: e,
    }))?;
    Ok(s.out.join(name))
}

fn ext(s: &Settings) -> &'static str {
    match s.format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    Ok(io::write_file(path, |w| io::write_json(w, value))?)
}

fn ga_params(s: &Settings, integer: bool) -> GaParams {
    let mut p = if integer {
        GaParams::integer()
    } else {
        GaParams::continuous()
    };
    if let Some(m) = s.generations {
        p.generations = m;
    }
    if let Some(r) = s.mutation_rate {
        p.base_mutation_rate = r;
    }
    p.population = s.population;
    p.seed = s.seed;
    p
}

/// Current prices: the first evaluation row, else the last in-sample row.
fn market(s: &Settings, inputs: &Inputs) -> Result<Option<MarketParams>> {
    let Some(cfg) = &s.market else {
        return Ok(None);
    };
    let prices = market_prices(s, inputs)?;
    Ok(Some(cfg.resolve(inputs.model.n_assets(), prices)?))
}

fn write_trace(s: &Settings, trace: &GaTrace) -> Result<()> {
    let path = out_path(s, &format!("trace.{}", ext(s)))?;
    match s.format {
        Format::Csv => Ok(io::write_file(&path, |w| io::write_trace_csv(w, trace))?),
        Format::Json => json_file(&path, trace),
    }
}

pub fn stats(s: &Settings) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        asset: &'a str,
        mean: f64,
        risk: f64,
        annual_mean: f64,
        annual_risk: f64,
    }
    let inputs = load(s)?;
    let model = &inputs.model;
    let path = out_path(s, &format!("stats.{}", ext(s)))?;
    match s.format {
        Format::Csv => io::write_file(&path, |w| io::write_dispersion_csv(w, model))?,
        Format::Json => {
            let conv = model.convention();
            let rows: Vec<Row> = model
                .assets()
                .iter()
                .zip(model.dispersion())
                .map(|(a, (risk, mean))| Row {
                    asset: a,
                    mean,
                    risk,
                    annual_mean: conv.annual_expectation(mean),
                    annual_risk: conv.annual_risk(risk),
                })
                .collect();
            json_file(&path, &rows)?;
        }
    }
    Ok(())
}

pub fn optimize(s: &Settings) -> Result<()> {
    let inputs = load(s)?;
    let model = &inputs.model;
    let report_path = out_path(s, "portfolio.json")?;

    if let Some(market) = market(s, &inputs)? {
        let lambda = s.lambda.unwrap_or(0.5);
        let params = ga_params(s, true);
        let (sol, trace) = ga_lambda_n_portfolio(model, lambda, &params, &market)?;
        json_file(&report_path, &IntegerReport::new(&sol, model, params.report_threshold))?;
        return write_trace(s, &trace);
    }

    if s.ga {
        let lambda = s.lambda.unwrap_or(0.5);
        let params = ga_params(s, false);
        let (portfolio, trace) = ga_lambda_portfolio(model, lambda, &params)?;
        let report = PortfolioReport::new(&portfolio, model.convention(), params.report_threshold);
        json_file(&report_path, &report)?;
        return write_trace(s, &trace);
    }

    let portfolio = match (s.target_return, s.lambda) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either --target-return or --lambda, not both".into(),
            ))
        }
        (Some(beta), None) => markowitz_portfolio(model, &ObjectiveParams::target(beta))?,
        (None, Some(lambda)) => lambda_portfolio(model, &ObjectiveParams::lambda(lambda))?,
        (None, None) => markowitz_portfolio(model, &ObjectiveParams::min_risk())?,
    };
    json_file(&report_path, &PortfolioReport::new(&portfolio, model.convention(), 0.0))
}

fn write_frontier(s: &Settings, name: &str, points: &[FrontierPoint]) -> Result<()> {
    let path = out_path(s, &format!("{name}.{}", ext(s)))?;
    match s.format {
        Format::Csv => Ok(io::write_file(&path, |w| io::write_frontier_csv(w, points))?),
        Format::Json => json_file(&path, &points),
    }
}

fn ladder_name(c: f64) -> String {
    format!("frontier_ga_c{c}")
}

pub fn frontier(s: &Settings) -> Result<()> {
    let inputs = load(s)?;
    let model = &inputs.model;

    if s.ga || s.cost_ladder.is_some() {
        let base = market(s, &inputs)?;
        match (&s.cost_ladder, base) {
            (Some(_), None) => {
                return Err(CliError::Config("--cost-ladder needs market parameters (--capital)".into()))
            }
            (Some(levels), Some(_)) => {
                let params = ga_params(s, true);
                for &c in levels {
                    let mut cfg = s.market.clone().expect("market present");
                    cfg.buy_cost = PerAsset::Scalar(c);
                    cfg.sell_cost = PerAsset::Scalar(c);
                    let market = cfg.resolve(model.n_assets(), market_prices(s, &inputs)?)?;
                    let points = ga_frontier(model, &params, Some(&market), s.points)?;
                    write_frontier(s, &ladder_name(c), &points)?;
                }
            }
            (None, market) => {
                let params = ga_params(s, market.is_some());
                let points = ga_frontier(model, &params, market.as_ref(), s.points)?;
                write_frontier(s, "frontier_ga", &points)?;
            }
        }
    } else {
        let points = efficient_frontier(model, s.points)?;
        write_frontier(s, "frontier", &points)?;
    }

    if s.cloud > 0 {
        #[derive(Serialize)]
        struct Sample {
            risk: f64,
            expected_return: f64,
        }
        let cloud = random_portfolio_cloud(model, s.cloud, s.seed);
        let path = out_path(s, &format!("cloud.{}", ext(s)))?;
        match s.format {
            Format::Csv => io::write_file(&path, |w| io::write_cloud_csv(w, &cloud))?,
            Format::Json => {
                let rows: Vec<Sample> = cloud
                    .iter()
                    .map(|&(risk, expected_return)| Sample {
                        risk,
                        expected_return,
                    })
                    .collect();
                json_file(&path, &rows)?;
            }
        }
    }

    if s.pairs {
        let curves = pairwise_curves(model, DEFAULT_CURVE_POINTS);
        let path = out_path(s, "pairs.csv")?;
        io::write_file(&path, |w| io::write_pairs_csv(w, model.assets(), &curves))?;
    }
    Ok(())
}

fn market_prices(s: &Settings, inputs: &Inputs) -> Result<Vec<f64>> {
    Ok(match &s.prices_eval {
        Some(path) => {
            let eval = load_prices(path, &csv_format(s))?;
            if eval.assets() != inputs.prices.assets() {
                return Err(portsel::Error::AssetAlignment(format!(
                    "{} does not list the in-sample assets in order",
                    path.display()
                ))
                .into());
            }
            eval.row(0)
        }
        None => inputs.prices.row(inputs.prices.periods() - 1),
    })
}

pub fn fit(s: &Settings) -> Result<()> {
    let inputs = load(s)?;
    let eval_path = s
        .prices_eval
        .as_ref()
        .ok_or_else(|| CliError::Config("fit needs an evaluation price file (--prices-eval)".into()))?;
    let eval = load_prices(eval_path, &csv_format(s))?;
    let report = frontier_fit(&inputs.model, &assets_return(&eval), s.points)?;
    let path = out_path(s, &format!("fit.{}", ext(s)))?;
    match s.format {
        Format::Csv => io::write_file(&path, |w| io::write_fit_csv(w, &report))?,
        Format::Json => json_file(&path, &report.pairs)?,
    }

    #[derive(Serialize)]
    struct Summary {
        points: usize,
        mean_error: f64,
        mean_underestimation_error: f64,
        annual_mean_error: f64,
        annual_mean_underestimation_error: f64,
    }
    json_file(
        &out_path(s, "fit_summary.json")?,
        &Summary {
            points: report.pairs.len(),
            mean_error: report.mean_error,
            mean_underestimation_error: report.mean_underestimation_error,
            annual_mean_error: report.annual_mean_error,
            annual_mean_underestimation_error: report.annual_mean_underestimation_error,
        },
    )
}
