//! Elitist genetic algorithm for the lambda portfolio model.
//!
//! One generation: roulette-select `N` parents, pair them in draw order,
//! possibly mutate the first parent of each pair, cross the pair at a random
//! cut, repair the children, then keep the `N` fittest of parents and
//! children together. Because the merge keeps the incumbent, the best fitness
//! never decreases.
//!
//! Two problem bindings share the engine: continuous weights on the simplex
//! ([`ContinuousProblem`]) and integer unit counts under a capital budget with
//! transaction costs ([`IntegerProblem`]).

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontier::{lambda_grid, FrontierPoint};
use crate::market_model::{self, IntegerSolution, MarketParams};
use crate::mv_optimizer::{lambda_objective, Portfolio};
use crate::risk_models::RiskModel;

/// Smallest population used regardless of the asset count.
pub const MIN_POPULATION: usize = 30;

/// Weights at or below this are omitted from GA reports.
pub const GA_REPORT_THRESHOLD: f64 = 0.005;

/// Growth of the mutation probability over a continuous run.
pub const CONTINUOUS_ESCALATION: f64 = 0.5;

/// Growth of the mutation probability over an integer run.
pub const INTEGER_ESCALATION: f64 = 0.3;

/// Optional stop before `generations` is reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Generations without improvement of the best fitness.
    pub window: usize,
    /// Relative gap between mean and best fitness treated as convergence.
    pub convergence: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            window: 30,
            convergence: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub generations: usize,
    pub base_mutation_rate: f64,
    /// Even population size; `None` picks `max(2 * floor(n / 2), 30)`.
    pub population: Option<usize>,
    pub seed: u64,
    pub report_threshold: f64,
    pub early_stop: Option<EarlyStop>,
}

impl GaParams {
    pub fn continuous() -> Self {
        Self {
            generations: 500,
            base_mutation_rate: 0.2,
            population: None,
            seed: 0,
            report_threshold: GA_REPORT_THRESHOLD,
            early_stop: None,
        }
    }

    pub fn integer() -> Self {
        Self {
            base_mutation_rate: 0.3,
            ..Self::continuous()
        }
    }

    pub fn with_generations(mut self, generations: usize) -> Self {
        self.generations = generations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 {
            return Err(Error::InvalidParameter("generations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.base_mutation_rate) {
            return Err(Error::InvalidParameter(format!(
                "mutation rate {} outside [0, 1]",
                self.base_mutation_rate
            )));
        }
        if let Some(n) = self.population {
            if n < 2 || n % 2 != 0 {
                return Err(Error::InvalidParameter(format!(
                    "population must be even and at least 2, got {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn population_size(&self, n_assets: usize) -> usize {
        self.population
            .unwrap_or_else(|| (2 * (n_assets / 2)).max(MIN_POPULATION))
    }
}

/// Best fitness per generation and the final population's fitness values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GaTrace {
    pub best_fitness: Vec<f64>,
    pub final_population_fitness: Vec<f64>,
}

/// Mutation probability at `generation` of `generations`: `base + g/m * escalation`.
pub fn mutation_probability(base: f64, generation: usize, generations: usize, escalation: f64) -> f64 {
    base + generation as f64 / generations as f64 * escalation
}

/// Deterministic generator for stream `stream` of `seed`. Single runs use
/// stream 0; frontier point `i` uses stream `i + 1`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fitness-proportional selection by cumulative-sum inversion.
///
/// Fitness values are shifted by `min - delta` first, so negative fitness is
/// allowed and the worst individual keeps a vanishing but nonzero share.
#[derive(Debug, Clone)]
pub struct Roulette {
    cumulative: Vec<f64>,
}

impl Roulette {
    pub fn new(fitness: &[f64]) -> Self {
        assert!(!fitness.is_empty(), "roulette over an empty population");
        let min = fitness.iter().copied().fold(f64::INFINITY, f64::min);
        let delta = 1e-12 * min.abs() + 1e-15;
        let shifted: Vec<f64> = fitness.iter().map(|f| f - min + delta).collect();
        let total: f64 = shifted.iter().sum();
        let cumulative = if total.is_finite() && total > 0.0 {
            let mut acc = 0.0;
            shifted
                .iter()
                .map(|s| {
                    acc += s / total;
                    acc
                })
                .collect()
        } else {
            let n = fitness.len() as f64;
            (1..=fitness.len()).map(|i| i as f64 / n).collect()
        };
        Self { cumulative }
    }

    /// Selection probabilities implied by the wheel.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    /// First index whose cumulative share exceeds a uniform draw.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let r: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&z| r < z)
            .unwrap_or(self.cumulative.len() - 1)
    }
}

pub fn roulette_select<R: Rng + ?Sized>(fitness: &[f64], rng: &mut R) -> usize {
    Roulette::new(fitness).select(rng)
}

fn normalized(mut w: DVector<f64>) -> Option<DVector<f64>> {
    let s = w.sum();
    if !(s > 0.0 && s.is_finite()) {
        return None;
    }
    w /= s;
    Some(w)
}

/// Exchanges the tails of two weight vectors after position `cut` and
/// renormalizes each child; `None` when a child has no mass.
pub fn crossover_continuous(
    w1: &DVector<f64>,
    w2: &DVector<f64>,
    cut: usize,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = w1.len();
    assert!(
        (1..n).contains(&cut) && w2.len() == n,
        "cut {cut} outside [1, {}]",
        n.saturating_sub(1)
    );
    let c1 = DVector::from_fn(n, |i, _| if i < cut { w1[i] } else { w2[i] });
    let c2 = DVector::from_fn(n, |i, _| if i < cut { w2[i] } else { w1[i] });
    Some((normalized(c1)?, normalized(c2)?))
}

/// With the scheduled probability, replaces one uniformly chosen weight by a
/// uniform draw on `[0, 2]`. Returns whether a mutation happened.
pub fn mutate_continuous<R: Rng + ?Sized>(
    w: &mut DVector<f64>,
    generation: usize,
    params: &GaParams,
    rng: &mut R,
) -> bool {
    let p = mutation_probability(
        params.base_mutation_rate,
        generation,
        params.generations,
        CONTINUOUS_ESCALATION,
    );
    if rng.random::<f64>() < p {
        let gene = rng.random_range(0..w.len());
        w[gene] = rng.random_range(0.0..=2.0);
        true
    } else {
        false
    }
}

/// Projects a unit-count vector onto the budget while keeping its value
/// proportions: each asset, visited by decreasing proportion (ties by index),
/// gets `floor(proportion * K / (p (1 + cb)))` units.
pub fn repair_integer(n_raw: &[u64], params: &MarketParams) -> Vec<u64> {
    let lot = params.lot_prices();
    let values: Vec<f64> = n_raw.iter().zip(&lot).map(|(&k, p)| k as f64 * p).collect();
    let total: f64 = values.iter().sum();
    let mut out = vec![0; n_raw.len()];
    if total <= 0.0 {
        return out;
    }
    let mut order: Vec<usize> = (0..n_raw.len()).filter(|&i| values[i] > 0.0).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    for &i in &order {
        let share = values[i] / total;
        let units = share * params.capital / (lot[i] * (1.0 + params.buy_cost_rates[i]));
        out[i] = units.floor() as u64;
    }
    // floating-point slack can leave a hair of overspend
    for &i in order.iter().rev() {
        while out[i] > 0 && market_model::residual(&out, params) < 0.0 {
            out[i] -= 1;
        }
    }
    out
}

/// A search space the engine can evolve.
pub trait Problem: Sync {
    type Genome: Clone + Send + Sync;

    fn random_genome(&self, rng: &mut ChaCha8Rng) -> Self::Genome;

    /// Mutates the first parent of a pair at `generation` (1-based).
    fn mutate(&self, genome: &mut Self::Genome, generation: usize, rng: &mut ChaCha8Rng);

    fn crossover(
        &self,
        a: &Self::Genome,
        b: &Self::Genome,
        rng: &mut ChaCha8Rng,
    ) -> (Self::Genome, Self::Genome);

    fn fitness(&self, genome: &Self::Genome) -> f64;
}

/// Individual with cached fitness.
#[derive(Debug, Clone)]
pub struct Scored<G> {
    pub genome: G,
    pub fitness: f64,
}

/// Generation-by-generation driver; [`Engine::run`] is the usual entry.
pub struct Engine<'a, P: Problem> {
    problem: &'a P,
    params: GaParams,
    rng: ChaCha8Rng,
    /// Sorted from worst to best.
    population: Vec<Scored<P::Genome>>,
    offspring: Vec<Scored<P::Genome>>,
    best: Vec<f64>,
    generation: usize,
}

impl<'a, P: Problem> Engine<'a, P> {
    pub fn new(problem: &'a P, params: GaParams, population_size: usize, mut rng: ChaCha8Rng) -> Self {
        let genomes: Vec<P::Genome> = (0..population_size)
            .map(|_| problem.random_genome(&mut rng))
            .collect();
        let mut population = evaluate(problem, genomes);
        sort_ascending(&mut population);
        let best = vec![population.last().expect("non-empty population").fitness];
        Self {
            problem,
            params,
            rng,
            population,
            offspring: Vec::new(),
            best,
            generation: 1,
        }
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn population(&self) -> &[Scored<P::Genome>] {
        &self.population
    }

    /// Children produced by the latest [`step`](Self::step).
    pub fn offspring(&self) -> &[Scored<P::Genome>] {
        &self.offspring
    }

    pub fn best(&self) -> &Scored<P::Genome> {
        self.population.last().expect("non-empty population")
    }

    pub fn step(&mut self) {
        self.generation += 1;
        let size = self.population.len();
        let fitness: Vec<f64> = self.population.iter().map(|s| s.fitness).collect();
        let wheel = Roulette::new(&fitness);
        let picks: Vec<usize> = (0..size).map(|_| wheel.select(&mut self.rng)).collect();

        let mut children = Vec::with_capacity(size);
        for pair in picks.chunks(2) {
            let mut first = self.population[pair[0]].genome.clone();
            let second = &self.population[pair[1]].genome;
            self.problem.mutate(&mut first, self.generation, &mut self.rng);
            let (c1, c2) = self.problem.crossover(&first, second, &mut self.rng);
            children.push(c1);
            children.push(c2);
        }
        let mut children = evaluate(self.problem, children);
        sort_ascending(&mut children);
        self.offspring = children.clone();

        let mut pool = std::mem::take(&mut self.population);
        pool.extend(children);
        sort_ascending(&mut pool);
        self.population = pool.split_off(pool.len() - size);
        self.best.push(self.best().fitness);
    }

    fn should_stop(&self) -> bool {
        let Some(rule) = self.params.early_stop else {
            return false;
        };
        let best = self.best().fitness;
        let mean = self.population.iter().map(|s| s.fitness).sum::<f64>() / self.population.len() as f64;
        if (best - mean).abs() <= rule.convergence * best.abs() {
            return true;
        }
        let g = self.best.len();
        g > rule.window && self.best[g - 1] <= self.best[g - 1 - rule.window]
    }

    /// Runs the remaining generations and returns the best individual.
    pub fn run(mut self) -> (Scored<P::Genome>, GaTrace) {
        while self.generation < self.params.generations && !self.should_stop() {
            self.step();
        }
        let trace = GaTrace {
            best_fitness: self.best,
            final_population_fitness: self.population.iter().map(|s| s.fitness).collect(),
        };
        let best = self.population.pop().expect("non-empty population");
        (best, trace)
    }
}

fn evaluate<P: Problem>(problem: &P, genomes: Vec<P::Genome>) -> Vec<Scored<P::Genome>> {
    genomes
        .into_par_iter()
        .map(|genome| {
            let fitness = problem.fitness(&genome);
            Scored { genome, fitness }
        })
        .collect()
}

fn sort_ascending<G>(pool: &mut [Scored<G>]) {
    pool.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
}

/// Portfolio weights on the simplex, fitness `lambda mu'w - (1-lambda) w'Sw`.
pub struct ContinuousProblem<'a> {
    pub model: &'a RiskModel,
    pub lambda: f64,
    pub params: GaParams,
}

impl Problem for ContinuousProblem<'_> {
    type Genome = DVector<f64>;

    fn random_genome(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = self.model.n_assets();
        loop {
            let w = DVector::from_fn(n, |_, _| rng.random::<f64>());
            if let Some(w) = normalized(w) {
                return w;
            }
        }
    }

    fn mutate(&self, genome: &mut DVector<f64>, generation: usize, rng: &mut ChaCha8Rng) {
        mutate_continuous(genome, generation, &self.params, rng);
    }

    fn crossover(
        &self,
        a: &DVector<f64>,
        b: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> (DVector<f64>, DVector<f64>) {
        let n = a.len();
        // a massless child can only come from zero tails or heads; retry other cuts
        for _ in 0..n {
            let cut = rng.random_range(1..n);
            if let Some(children) = crossover_continuous(a, b, cut) {
                return children;
            }
        }
        let a = normalized(a.clone()).unwrap_or_else(|| b.clone());
        (a, b.clone())
    }

    fn fitness(&self, genome: &DVector<f64>) -> f64 {
        lambda_objective(self.model, genome, self.lambda)
    }
}

/// Unit counts under the capital budget, fitness from [`market_model::fitness`].
pub struct IntegerProblem<'a> {
    pub model: &'a RiskModel,
    pub market: &'a MarketParams,
    pub lambda: f64,
    pub params: GaParams,
    max_units: u64,
    unit_outlays: Vec<f64>,
}

impl<'a> IntegerProblem<'a> {
    pub fn new(model: &'a RiskModel, market: &'a MarketParams, lambda: f64, params: GaParams) -> Self {
        Self {
            model,
            market,
            lambda,
            params,
            max_units: market.max_units(),
            unit_outlays: market.unit_outlays(),
        }
    }
}

impl Problem for IntegerProblem<'_> {
    type Genome = Vec<u64>;

    /// Visits assets in random order, buying a uniform count within what the
    /// remaining capital affords.
    fn random_genome(&self, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let n = self.model.n_assets();
        let mut units = vec![0u64; n];
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut remaining = self.market.capital;
        for j in order {
            let cap = (remaining / self.unit_outlays[j]).floor().max(0.0) as u64;
            units[j] = rng.random_range(0..=cap);
            remaining = market_model::residual(&units, self.market);
        }
        units
    }

    fn mutate(&self, genome: &mut Vec<u64>, generation: usize, rng: &mut ChaCha8Rng) {
        let p = mutation_probability(
            self.params.base_mutation_rate,
            generation,
            self.params.generations,
            INTEGER_ESCALATION,
        );
        if rng.random::<f64>() < p {
            let gene = rng.random_range(0..genome.len());
            let upper = (2 * self.max_units).max(1);
            genome[gene] = rng.random_range(1..=upper);
        }
    }

    fn crossover(&self, a: &Vec<u64>, b: &Vec<u64>, rng: &mut ChaCha8Rng) -> (Vec<u64>, Vec<u64>) {
        let n = a.len();
        let cut = rng.random_range(1..n);
        let c1: Vec<u64> = a[..cut].iter().chain(&b[cut..]).copied().collect();
        let c2: Vec<u64> = b[..cut].iter().chain(&a[cut..]).copied().collect();
        (repair_integer(&c1, self.market), repair_integer(&c2, self.market))
    }

    fn fitness(&self, genome: &Vec<u64>) -> f64 {
        market_model::fitness(genome, self.model, self.market, self.lambda)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

fn continuous_run(
    model: &RiskModel,
    lambda: f64,
    params: &GaParams,
    rng: ChaCha8Rng,
) -> Result<(Portfolio, GaTrace)> {
    check_lambda(lambda)?;
    params.validate()?;
    if model.n_assets() == 1 {
        let w = DVector::from_element(1, 1.0);
        let f = lambda_objective(model, &w, lambda);
        let trace = GaTrace {
            best_fitness: vec![f],
            final_population_fitness: vec![f],
        };
        return Ok((Portfolio::from_weights(model, w), trace));
    }
    let problem = ContinuousProblem {
        model,
        lambda,
        params: params.clone(),
    };
    let size = params.population_size(model.n_assets());
    let (best, trace) = Engine::new(&problem, params.clone(), size, rng).run();
    Ok((Portfolio::from_weights(model, best.genome), trace))
}

fn integer_run(
    model: &RiskModel,
    lambda: f64,
    params: &GaParams,
    market: &MarketParams,
    rng: ChaCha8Rng,
) -> Result<(IntegerSolution, GaTrace)> {
    check_lambda(lambda)?;
    params.validate()?;
    market.validate()?;
    if market.n_assets() != model.n_assets() {
        return Err(Error::Dimension(format!(
            "{} market prices for {} model assets",
            market.n_assets(),
            model.n_assets()
        )));
    }
    let problem = IntegerProblem::new(model, market, lambda, params.clone());
    let size = params.population_size(model.n_assets());
    let (best, trace) = if model.n_assets() == 1 {
        // no cut point exists; the best affordable count is found by the initial draws
        let mut engine = Engine::new(&problem, params.clone(), size, rng);
        let all_in = vec![(market.capital / problem.unit_outlays[0]).floor() as u64];
        let f = problem.fitness(&all_in);
        if f > engine.best().fitness {
            engine.population.push(Scored { genome: all_in, fitness: f });
            engine.population.remove(0);
            sort_ascending(&mut engine.population);
            engine.best[0] = f;
        }
        let trace = GaTrace {
            best_fitness: engine.best.clone(),
            final_population_fitness: engine.population.iter().map(|s| s.fitness).collect(),
        };
        (engine.population.pop().expect("non-empty"), trace)
    } else {
        Engine::new(&problem, params.clone(), size, rng).run()
    };
    Ok((IntegerSolution::evaluate(&best.genome, model, market, lambda), trace))
}

/// Continuous-weight GA for the lambda model.
pub fn ga_lambda_portfolio(
    model: &RiskModel,
    lambda: f64,
    params: &GaParams,
) -> Result<(Portfolio, GaTrace)> {
    continuous_run(model, lambda, params, rng_for(params.seed, 0))
}

/// Integer-unit GA with transaction costs, lots and residual cash.
pub fn ga_lambda_n_portfolio(
    model: &RiskModel,
    lambda: f64,
    params: &GaParams,
    market: &MarketParams,
) -> Result<(IntegerSolution, GaTrace)> {
    integer_run(model, lambda, params, market, rng_for(params.seed, 0))
}

/// Lambda-swept GA frontier; integer binding when `market` is given.
pub fn ga_frontier(
    model: &RiskModel,
    params: &GaParams,
    market: Option<&MarketParams>,
    n_points: usize,
) -> Result<Vec<FrontierPoint>> {
    let lambdas = lambda_grid(n_points)?;
    let points: Vec<Result<FrontierPoint>> = lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let rng = rng_for(params.seed, i as u64 + 1);
            let portfolio = match market {
                None => continuous_run(model, lambda, params, rng)?.0,
                Some(market) => {
                    let sol = integer_run(model, lambda, params, market, rng)?.0;
                    Portfolio {
                        assets: sol.assets,
                        weights: DVector::from_vec(sol.implied_weights),
                        expected_return: sol.expected_return,
                        risk: sol.risk,
                        kind: model.kind(),
                    }
                }
            };
            Ok(FrontierPoint {
                parameter: lambda,
                risk: portfolio.risk,
                expected_return: portfolio.expected_return,
                portfolio,
            })
        })
        .collect();
    points.into_iter().collect()
}
