//! Objective, feasibility and the branch-and-bound population search.
//!
//! The search is a steady-state elitist evolution over [`DenseNetConfig`]s.
//! Offspring are produced in waves of `population_size` single-coordinate
//! mutations, scored (possibly in parallel) and merged back in submission
//! order, so a run is a pure function of its inputs and seed regardless of the
//! worker count. Every `prune_period` iterations the incumbent's per-stage
//! entropies are fitted with a power law and the stage that strays furthest
//! from its ideal target has its candidate ranges shrunk.

use std::collections::HashSet;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{
    estimate_resources, validate_config, DenseNetConfig, LayerRange, ResourceEstimate,
    SearchSpace, StageConfig, Violation,
};
use crate::entropy::{network_entropies, stage_entropy, StageEntropy};
use crate::error::{Error, Result};
use crate::powerlaw::{fit_power, ideal_entropy_targets, stage_indices, PowerFit};

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_RHO_MAX: f64 = 20.0;
pub const DEFAULT_PRUNE_TOLERANCE: f64 = 0.25;
/// Attempts `mutate` makes before giving up and returning its input.
pub const MUTATION_RESAMPLES: usize = 32;

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_rho() -> f64 {
    DEFAULT_RHO_MAX
}

/// Weights and constraints of the optimization problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// Per-stage entropy weights; empty means 1.0 for every stage.
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_rho")]
    pub rho_max: f64,
    pub flops_budget: u64,
    pub params_budget: u64,
}

impl ObjectiveSpec {
    /// Unit weights, default `β` and `ρ`.
    pub fn with_budgets(num_stages: usize, flops_budget: u64, params_budget: u64) -> Self {
        Self {
            alphas: vec![1.0; num_stages],
            beta: DEFAULT_BETA,
            rho_max: DEFAULT_RHO_MAX,
            flops_budget,
            params_budget,
        }
    }

    /// Fills in unit weights when none were given.
    pub fn resolved(mut self, num_stages: usize) -> Self {
        if self.alphas.is_empty() {
            self.alphas = vec![1.0; num_stages];
        }
        self
    }

    pub fn check(&self, num_stages: usize) -> Result<()> {
        if self.alphas.len() != num_stages {
            return Err(Error::Config(format!(
                "{} alphas for {} stages",
                self.alphas.len(),
                num_stages
            )));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Config("alphas must be finite and non-negative".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config("beta must be finite and non-negative".into()));
        }
        if !(self.rho_max > 0.0 && self.rho_max <= 100.0) {
            return Err(Error::Config(format!("rho_max {} not in (0, 100]", self.rho_max)));
        }
        if self.flops_budget == 0 || self.params_budget == 0 {
            return Err(Error::Config("budgets must be positive".into()));
        }
        Ok(())
    }
}

/// Objective value with the pieces it was assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub stage_entropies: Vec<StageEntropy>,
    /// Absent when the profile cannot be fitted (fewer than two stages).
    pub fit: Option<PowerFit>,
}

/// `Σ α_i H_i + β · (a − b)` over a per-stage entropy profile.
///
/// Without a usable power fit the `β` term is dropped.
pub fn combine_entropies(entropies: &[f64], spec: &ObjectiveSpec) -> (f64, Option<PowerFit>) {
    let weighted: f64 = spec.alphas.iter().zip(entropies).map(|(a, h)| a * h).sum();
    match fit_power(entropies, &stage_indices(entropies.len())) {
        Ok(fit) => (weighted + spec.beta * fit.s_score, Some(fit)),
        Err(_) => (weighted, None),
    }
}

pub fn objective(config: &DenseNetConfig, spec: &ObjectiveSpec) -> Result<Objective> {
    spec.check(config.stages.len())?;
    let stage_entropies = network_entropies(config)?;
    let values: Vec<f64> = stage_entropies.iter().map(|h| h.value).collect();
    let (value, fit) = combine_entropies(&values, spec);
    Ok(Objective {
        value,
        stage_entropies,
        fit,
    })
}

/// A broken constraint of the optimization problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Infeasibility {
    Effectiveness { stage: usize, ratio: f64, cap: f64 },
    Flops { flops: u64, budget: u64 },
    Params { params: u64, budget: u64 },
    WidthOrder { stage: usize, previous: u32, current: u32 },
    Unmeasurable(String),
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasibility::Effectiveness { stage, ratio, cap } => {
                write!(f, "stage {}: effectiveness {} > {}", stage + 1, ratio, cap)
            }
            Infeasibility::Flops { flops, budget } => write!(f, "flops {flops} > budget {budget}"),
            Infeasibility::Params { params, budget } => {
                write!(f, "params {params} > budget {budget}")
            }
            Infeasibility::WidthOrder { stage, previous, current } => write!(
                f,
                "stage {}: in_width {} below previous stage's {}",
                stage + 1,
                current,
                previous
            ),
            Infeasibility::Unmeasurable(msg) => write!(f, "{msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub ok: bool,
    pub violations: Vec<Infeasibility>,
    pub resources: Option<ResourceEstimate>,
}

/// Checks effectiveness, FLOPs, parameters and width ordering, in that order.
pub fn feasible(config: &DenseNetConfig, spec: &ObjectiveSpec) -> Feasibility {
    let mut violations = Vec::new();
    for (i, stage) in config.stages.iter().enumerate() {
        let ratio = crate::entropy::effectiveness(stage);
        if ratio.is_nan() || ratio > spec.rho_max {
            violations.push(Infeasibility::Effectiveness {
                stage: i,
                ratio,
                cap: spec.rho_max,
            });
        }
    }
    let resources = match estimate_resources(config) {
        Ok(r) => {
            if r.flops > spec.flops_budget {
                violations.push(Infeasibility::Flops {
                    flops: r.flops,
                    budget: spec.flops_budget,
                });
            }
            if r.params > spec.params_budget {
                violations.push(Infeasibility::Params {
                    params: r.params,
                    budget: spec.params_budget,
                });
            }
            Some(r)
        }
        Err(e) => {
            violations.push(Infeasibility::Unmeasurable(e.to_string()));
            None
        }
    };
    for v in config.width_order_violations() {
        if let Violation::WidthOrder { stage, previous, current } = v {
            violations.push(Infeasibility::WidthOrder {
                stage,
                previous,
                current,
            });
        }
    }
    Feasibility {
        ok: violations.is_empty(),
        violations,
        resources,
    }
}

/// A scored architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub config: DenseNetConfig,
    pub objective_value: f64,
    pub entropy_report: Vec<StageEntropy>,
    pub power_fit: Option<PowerFit>,
    pub feasible: bool,
    pub resources: Option<ResourceEstimate>,
}

impl Candidate {
    pub fn stage_values(&self) -> Vec<f64> {
        self.entropy_report.iter().map(|h| h.value).collect()
    }
}

pub fn score(config: &DenseNetConfig, spec: &ObjectiveSpec) -> Result<Candidate> {
    let obj = objective(config, spec)?;
    let verdict = feasible(config, spec);
    Ok(Candidate {
        config: config.clone(),
        objective_value: obj.value,
        entropy_report: obj.stage_entropies,
        power_fit: obj.fit,
        feasible: verdict.ok,
        resources: verdict.resources,
    })
}

/// Which coordinates a mutation may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationScope {
    Global,
    Stage(usize),
}

#[derive(Debug, Clone, Copy)]
enum Coordinate {
    Layers(usize),
    Growth(usize),
    Kernel(usize),
    Stem,
}

fn set_neighbour(set: &std::collections::BTreeSet<u32>, value: u32, up: bool) -> Option<u32> {
    if up {
        set.range(value.saturating_add(1)..).next().copied()
    } else {
        set.range(..value).next_back().copied()
    }
}

fn neighbour(config: &DenseNetConfig, space: &SearchSpace, coord: Coordinate, up: bool) -> Option<u32> {
    match coord {
        Coordinate::Layers(i) => space.layers[i].adjacent(config.stages[i].num_layers, up),
        Coordinate::Growth(i) => set_neighbour(space.growth_for(i), config.stages[i].growth_rate, up),
        Coordinate::Kernel(i) => set_neighbour(&space.kernel_choices, config.stages[i].kernel_size, up),
        Coordinate::Stem => set_neighbour(&space.stem_choices, config.stem_width, up),
    }
}

fn apply(config: &mut DenseNetConfig, coord: Coordinate, value: u32) {
    match coord {
        Coordinate::Layers(i) => config.stages[i].num_layers = value,
        Coordinate::Growth(i) => config.stages[i].growth_rate = value,
        Coordinate::Kernel(i) => config.stages[i].kernel_size = value,
        Coordinate::Stem => config.stem_width = value,
    }
}

/// Moves one uniformly chosen coordinate to an adjacent candidate value.
pub fn mutate<R: Rng + ?Sized>(config: &DenseNetConfig, space: &SearchSpace, rng: &mut R) -> DenseNetConfig {
    mutate_within(config, space, MutationScope::Global, rng)
}

/// Like [`mutate`] but restricted to `scope`. Children that fail
/// [`validate_config`] are resampled; after [`MUTATION_RESAMPLES`] failures the
/// input is returned unchanged.
pub fn mutate_within<R: Rng + ?Sized>(
    config: &DenseNetConfig,
    space: &SearchSpace,
    scope: MutationScope,
    rng: &mut R,
) -> DenseNetConfig {
    let stages = config.stages.len().min(space.num_stages);
    let mut coords = Vec::with_capacity(3 * stages + 1);
    let stage_range = match scope {
        MutationScope::Global => 0..stages,
        MutationScope::Stage(s) if s < stages => s..s + 1,
        MutationScope::Stage(_) => 0..0,
    };
    for i in stage_range {
        coords.extend([Coordinate::Layers(i), Coordinate::Growth(i), Coordinate::Kernel(i)]);
    }
    if scope == MutationScope::Global {
        coords.push(Coordinate::Stem);
    }
    let moves: Vec<(Coordinate, Vec<u32>)> = coords
        .into_iter()
        .map(|c| {
            let targets = [false, true]
                .into_iter()
                .filter_map(|up| neighbour(config, space, c, up))
                .collect::<Vec<_>>();
            (c, targets)
        })
        .filter(|(_, t)| !t.is_empty())
        .collect();
    if moves.is_empty() {
        return config.clone();
    }

    for _ in 0..MUTATION_RESAMPLES {
        let (coord, targets) = &moves[rng.random_range(0..moves.len())];
        let value = targets[rng.random_range(0..targets.len())];
        let mut child = config.clone();
        apply(&mut child, *coord, value);
        if child.rederive().is_ok() && validate_config(&child, space).is_empty() {
            return child;
        }
    }
    config.clone()
}

/// `|x − t| / max(x, t)`, in `[0, 1]` for non-negative inputs.
pub fn relative_deviation(value: f64, target: f64) -> f64 {
    let scale = value.abs().max(target.abs());
    if scale == 0.0 {
        0.0
    } else {
        (value - target).abs() / scale
    }
}

/// Outcome of one pruning step.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub space: SearchSpace,
    /// Stage that deviated most from its target, if pruning ran at all.
    pub stage: Option<usize>,
    pub removed: usize,
}

/// Shrinks the layer and growth ranges of the stage whose entropy strays
/// furthest from its power-law target. See [`prune_space_detailed`].
pub fn prune_space(space: &SearchSpace, best: &Candidate, targets: &[f64], tolerance: f64) -> SearchSpace {
    prune_space_detailed(space, best, targets, tolerance).space
}

/// Boundary candidates are discarded while the best entropy their sub-range
/// can reach (largest layers, growth and kernel still available, at the
/// incumbent's input width and resolution) lies on the wrong side of the
/// target by more than `tolerance` in [`relative_deviation`]. The incumbent's
/// own values are never removed.
pub fn prune_space_detailed(
    space: &SearchSpace,
    best: &Candidate,
    targets: &[f64],
    tolerance: f64,
) -> PruneOutcome {
    let unchanged = PruneOutcome {
        space: space.clone(),
        stage: None,
        removed: 0,
    };
    let stages = space.num_stages;
    if stages < 2 || tolerance >= 1.0 || targets.len() != stages || best.entropy_report.len() != stages {
        return unchanged;
    }
    let stage = (0..stages)
        .map(|i| (i, relative_deviation(best.entropy_report[i].value, targets[i])))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
        .0;
    let target = targets[stage];
    let incumbent = best.config.stages[stage];
    let max_kernel = *space.kernel_choices.iter().next_back().expect("non-empty");

    let bound = |layers: u32, growth: u32| -> f64 {
        let probe = StageConfig {
            num_layers: layers,
            growth_rate: growth,
            kernel_size: max_kernel,
            ..incumbent
        };
        stage_entropy(&probe).map(|h| h.value).unwrap_or(0.0)
    };
    let too_high = |ub: f64| ub > target && relative_deviation(ub, target) > tolerance;
    let too_low = |ub: f64| ub < target && relative_deviation(ub, target) > tolerance;

    let mut out = space.clone();
    let mut removed = 0;
    let mut layers: LayerRange = out.layers[stage];

    let mut growth = out.growth_for(stage).clone();
    let top_layers = layers.top();
    while growth.len() > 1 {
        let g = *growth.iter().next_back().expect("non-empty");
        if g == incumbent.growth_rate || !too_high(bound(top_layers, g)) {
            break;
        }
        growth.remove(&g);
        removed += 1;
    }
    while growth.len() > 1 {
        let g = *growth.iter().next().expect("non-empty");
        if g == incumbent.growth_rate || !too_low(bound(top_layers, g)) {
            break;
        }
        growth.remove(&g);
        removed += 1;
    }
    let max_growth = *growth.iter().next_back().expect("non-empty");

    while !layers.is_singleton() {
        let top = layers.top();
        if top == incumbent.num_layers || !too_high(bound(top, max_growth)) {
            break;
        }
        layers.max = top - layers.step;
        removed += 1;
    }
    while !layers.is_singleton() {
        let low = layers.min;
        if low == incumbent.num_layers || !too_low(bound(low, max_growth)) {
            break;
        }
        layers.min = low + layers.step;
        removed += 1;
    }

    if removed > 0 {
        out.layers[stage] = layers;
        *out.growth_for_mut(stage) = growth;
    }
    PruneOutcome {
        space: out,
        stage: Some(stage),
        removed,
    }
}

fn default_tolerance() -> f64 {
    DEFAULT_PRUNE_TOLERANCE
}

fn default_true() -> bool {
    true
}

fn default_stride() -> u64 {
    1
}

fn default_workers() -> usize {
    1
}

/// Search loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParams {
    /// Offspring generated and scored per wave.
    pub population_size: usize,
    pub iterations: u64,
    pub prune_period: u64,
    /// Largest population kept between iterations.
    pub population_cap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub prune_tolerance: f64,
    /// Enables power-law pruning and per-stage refinement bursts.
    #[serde(default = "default_true")]
    pub fine_search: bool,
    #[serde(skip, default = "default_stride")]
    pub log_stride: u64,
    #[serde(skip, default = "default_workers")]
    pub workers: usize,
}

impl SearchParams {
    pub fn new(population_size: usize, iterations: u64, seed: u64) -> Self {
        Self {
            population_size,
            iterations,
            prune_period: (iterations / 10).max(1),
            population_cap: population_size,
            seed,
            prune_tolerance: DEFAULT_PRUNE_TOLERANCE,
            fine_search: true,
            log_stride: 1,
            workers: 1,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.population_size == 0 || self.population_cap == 0 {
            return Err(Error::Config("population_size and population_cap must be >= 1".into()));
        }
        if self.prune_period == 0 {
            return Err(Error::Config("prune_period must be >= 1".into()));
        }
        if self.iterations > 0 && self.prune_period > self.iterations {
            return Err(Error::Config(format!(
                "prune_period {} exceeds iterations {}",
                self.prune_period, self.iterations
            )));
        }
        if !(self.prune_tolerance > 0.0 && self.prune_tolerance <= 1.0) {
            return Err(Error::Config("prune_tolerance must lie in (0, 1]".into()));
        }
        if self.log_stride == 0 {
            return Err(Error::Config("log stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// One trajectory log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub iteration: u64,
    pub best_objective: f64,
    pub population_size: usize,
    pub prunes_applied: u64,
}

#[derive(Debug, Clone)]
pub struct SearchTrajectory {
    /// Incumbent objective, sampled every `log_stride` iterations and at the end.
    pub best_per_iteration: Vec<f64>,
    pub rows: Vec<TrajectoryRow>,
    pub final_best: Candidate,
    pub evaluations: u64,
    /// Every config admitted to the population, in admission order (the
    /// initial structure first).
    pub accepted: Vec<DenseNetConfig>,
    pub final_space: SearchSpace,
    pub prunes_applied: u64,
    pub wall_time: f64,
}

fn evict_worst(population: &mut Vec<Candidate>, best: &DenseNetConfig) -> Option<Candidate> {
    let worst = population
        .iter()
        .enumerate()
        .filter(|(_, c)| &c.config != best)
        .fold(None::<(usize, f64)>, |acc, (i, c)| match acc {
            Some((_, v)) if v <= c.objective_value => acc,
            _ => Some((i, c.objective_value)),
        })?
        .0;
    Some(population.remove(worst))
}

/// Runs the population search from `initial`.
pub fn search(
    space: &SearchSpace,
    spec: &ObjectiveSpec,
    params: &SearchParams,
    initial: &DenseNetConfig,
) -> Result<SearchTrajectory> {
    let started = Instant::now();
    space.check()?;
    params.check()?;
    spec.check(space.num_stages)?;
    let invalid = validate_config(initial, space);
    if !invalid.is_empty() {
        return Err(Error::InvalidInitial(invalid));
    }
    let verdict = feasible(initial, spec);
    if !verdict.ok {
        return Err(Error::InfeasibleInitial(verdict.violations));
    }

    let pool = if params.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(params.workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot start workers: {e}")))?,
        )
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut space = space.clone();
    let seed = score(initial, spec)?;
    let mut best = seed.clone();
    let mut members: HashSet<DenseNetConfig> = HashSet::from([seed.config.clone()]);
    let mut population = vec![seed];
    let mut accepted = vec![initial.clone()];
    let mut best_per_iteration = Vec::new();
    let mut rows = Vec::new();
    let mut evaluations = 0u64;
    let mut prunes = 0u64;
    let mut focus: Option<usize> = None;

    let total = params.iterations;
    let mut done = 0u64;
    while done < total {
        let wave = (params.population_size as u64).min(total - done);
        let children: Vec<(u64, DenseNetConfig)> = (1..=wave)
            .map(|w| {
                let iteration = done + w;
                let phase = (iteration - 1) % params.prune_period;
                let scope = match focus {
                    Some(s) if params.fine_search && phase >= params.prune_period / 2 => {
                        MutationScope::Stage(s)
                    }
                    _ => MutationScope::Global,
                };
                let parent = &population[rng.random_range(0..population.len())];
                (iteration, mutate_within(&parent.config, &space, scope, &mut rng))
            })
            .collect();

        let scored: Vec<Result<Candidate>> = match &pool {
            Some(pool) => pool.install(|| children.par_iter().map(|(_, c)| score(c, spec)).collect()),
            None => children.iter().map(|(_, c)| score(c, spec)).collect(),
        };

        for ((iteration, child), candidate) in children.into_iter().zip(scored) {
            evaluations += 1;
            if let Ok(candidate) = candidate {
                let admissible = candidate.feasible
                    && !members.contains(&child)
                    && validate_config(&child, &space).is_empty();
                if admissible {
                    if candidate.objective_value > best.objective_value {
                        best = candidate.clone();
                    }
                    members.insert(child.clone());
                    accepted.push(child);
                    population.push(candidate);
                    while population.len() > params.population_cap {
                        match evict_worst(&mut population, &best.config) {
                            Some(gone) => {
                                members.remove(&gone.config);
                            }
                            None => break,
                        }
                    }
                }
            }

            if params.fine_search && iteration % params.prune_period == 0 {
                if let Some(fit) = best.power_fit {
                    let targets = ideal_entropy_targets(&fit, space.num_stages);
                    let outcome = prune_space_detailed(&space, &best, &targets, params.prune_tolerance);
                    focus = outcome.stage;
                    if outcome.removed > 0 {
                        prunes += 1;
                        space = outcome.space;
                        population.retain(|c| {
                            let keep = c.config == best.config || validate_config(&c.config, &space).is_empty();
                            if !keep {
                                members.remove(&c.config);
                            }
                            keep
                        });
                    }
                }
            }

            if iteration % params.log_stride == 0 || iteration == total {
                best_per_iteration.push(best.objective_value);
                rows.push(TrajectoryRow {
                    iteration,
                    best_objective: best.objective_value,
                    population_size: population.len(),
                    prunes_applied: prunes,
                });
            }
        }
        done += wave;
    }

    Ok(SearchTrajectory {
        best_per_iteration,
        rows,
        final_best: best,
        evaluations,
        accepted,
        final_space: space,
        prunes_applied: prunes,
        wall_time: started.elapsed().as_secs_f64(),
    })
}
