//! Machine-readable output: CSV tables and JSON reports.
//!
//! Floating-point CSV fields are written with 17 significant digits so a
//! rerun with the same inputs reproduces files byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frontier::{FitReport, FrontierPoint, PairCurve};
use crate::ga::GaTrace;
use crate::market_model::IntegerSolution;
use crate::mv_optimizer::Portfolio;
use crate::risk_models::{AnnualizationConvention, RiskKind, RiskModel};

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

fn table<W: Write>(out: W, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::Serialization(e.to_string()))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `parameter,risk,expected_return` followed by one weight column per asset.
pub fn write_frontier_csv<W: Write>(out: W, points: &[FrontierPoint]) -> Result<()> {
    let mut head = header(&["parameter", "risk", "expected_return"]);
    if let Some(p) = points.first() {
        head.extend(p.portfolio.assets.iter().cloned());
    }
    table(
        out,
        &head,
        points.iter().map(|p| {
            [p.parameter, p.risk, p.expected_return]
                .into_iter()
                .chain(p.portfolio.weights.iter().copied())
                .map(fmt_float)
                .collect()
        }),
    )
}

pub fn write_cloud_csv<W: Write>(out: W, cloud: &[(f64, f64)]) -> Result<()> {
    table(
        out,
        &header(&["risk", "expected_return"]),
        cloud.iter().map(|&(r, m)| vec![fmt_float(r), fmt_float(m)]),
    )
}

/// Per-asset mean and risk, daily and annualized (`sqrt` of the expectation
/// period count for risk, as the header states).
pub fn write_dispersion_csv<W: Write>(out: W, model: &RiskModel) -> Result<()> {
    let conv = model.convention();
    let head = vec![
        "asset".to_string(),
        "mean".to_string(),
        "risk".to_string(),
        format!("annual_mean_x{}", conv.expectation_periods),
        format!("annual_risk_sqrt{}", conv.expectation_periods),
    ];
    table(
        out,
        &head,
        model.assets().iter().zip(model.dispersion()).map(|(a, (risk, mean))| {
            vec![
                a.clone(),
                fmt_float(mean),
                fmt_float(risk),
                fmt_float(conv.annual_expectation(mean)),
                fmt_float(conv.annual_risk(risk)),
            ]
        }),
    )
}

/// Two-asset opportunity curves, one row per point.
pub fn write_pairs_csv<W: Write>(
    out: W,
    assets: &[String],
    curves: &[PairCurve],
) -> Result<()> {
    table(
        out,
        &header(&["asset_a", "asset_b", "risk", "expected_return"]),
        curves.iter().flat_map(|((a, b), pts)| {
            pts.iter().map(move |&(r, m)| {
                vec![assets[*a].clone(), assets[*b].clone(), fmt_float(r), fmt_float(m)]
            })
        }),
    )
}

pub fn write_trace_csv<W: Write>(out: W, trace: &GaTrace) -> Result<()> {
    table(
        out,
        &header(&["generation", "best_fitness"]),
        trace
            .best_fitness
            .iter()
            .enumerate()
            .map(|(g, f)| vec![(g + 1).to_string(), fmt_float(*f)]),
    )
}

pub fn write_fit_csv<W: Write>(out: W, report: &FitReport) -> Result<()> {
    table(
        out,
        &header(&["target", "expected", "realized"]),
        report
            .pairs
            .iter()
            .map(|p| vec![fmt_float(p.target), fmt_float(p.expected), fmt_float(p.realized)]),
    )
}

pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    writeln!(out).map_err(|e| Error::Serialization(e.to_string()))
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Return and risk per period and annualized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Figures {
    pub expected_return: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioReport {
    pub risk_measure: RiskKind,
    pub daily: Figures,
    pub annual: Figures,
    /// Weights rounded to 4 decimals, zeros omitted.
    pub weights: BTreeMap<String, f64>,
}

impl PortfolioReport {
    pub fn new(portfolio: &Portfolio, convention: AnnualizationConvention, threshold: f64) -> Self {
        let daily = Figures {
            expected_return: portfolio.expected_return,
            risk: portfolio.risk,
        };
        Self {
            risk_measure: portfolio.kind,
            daily,
            annual: annualize(daily, convention),
            weights: portfolio.sparse_view(4, threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegerReport {
    pub risk_measure: RiskKind,
    pub daily: Figures,
    pub annual: Figures,
    pub fitness: f64,
    pub residual_cash: f64,
    pub units: BTreeMap<String, u64>,
    pub weights: BTreeMap<String, f64>,
}

impl IntegerReport {
    pub fn new(solution: &IntegerSolution, model: &RiskModel, threshold: f64) -> Self {
        let daily = Figures {
            expected_return: solution.expected_return,
            risk: solution.risk,
        };
        Self {
            risk_measure: model.kind(),
            daily,
            annual: annualize(daily, model.convention()),
            fitness: solution.fitness,
            residual_cash: solution.residual,
            units: solution.share_view(),
            weights: solution.weight_view(threshold),
        }
    }
}

fn annualize(daily: Figures, convention: AnnualizationConvention) -> Figures {
    Figures {
        expected_return: convention.annual_expectation(daily.expected_return),
        risk: convention.annual_risk(daily.risk),
    }
}
