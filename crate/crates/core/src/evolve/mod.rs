//! The generational multi-gene engine.

mod individual;
mod operators;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use individual::Individual;
pub use operators::{
    constant_mutation, distinct_weights, global_weights_mutation, high_level_xover,
    high_level_xover_masked, is_synchronized, lcf_indices, low_level_xover, subtree_mutation,
    sync_repair, tournament_select, weights_mutation, WeightScope,
};

use crate::backprop::{bind_to_table, global_tune, tune, GlobalTable, Grouping, StepBudget};
use crate::bench::Dataset;
use crate::exprtree::{random_tree, Gene, LeafMix, Method, Primitives, TreeGenConfig};
use crate::fitness::{score, FitnessReport};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration codename `{0}`")]
    UnknownCodename(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum RunError {
    #[error("training target is constant")]
    ConstantTarget,
    #[error("train has {train} features but test has {test}")]
    Dimension { train: usize, test: usize },
    #[error("budget needs a generation or time limit")]
    NoBudget,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// How LCF weights are shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// No LCF leaves.
    Baseline,
    /// Every LCF leaf owns its weights.
    Unsynchronized,
    /// Same-index leaves within an individual share weights.
    Synchronized,
    /// Same-index leaves across the population share weights.
    Global,
}

/// How LCF weights are changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tuning {
    None,
    Mutation,
    Backprop,
    Both,
}

impl Tuning {
    pub fn mutates(self) -> bool {
        matches!(self, Tuning::Mutation | Tuning::Both)
    }

    pub fn backprops(self) -> bool {
        matches!(self, Tuning::Backprop | Tuning::Both)
    }
}

/// A configuration codename such as `UB` or `baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeConfig {
    pub mode: Mode,
    pub tuning: Tuning,
}

impl ModeConfig {
    pub const BASELINE: ModeConfig = ModeConfig {
        mode: Mode::Baseline,
        tuning: Tuning::None,
    };

    pub fn new(mode: Mode, tuning: Tuning) -> Result<Self, ConfigError> {
        let ok = match mode {
            Mode::Baseline => tuning == Tuning::None,
            Mode::Global => tuning.backprops(),
            _ => tuning != Tuning::None,
        };
        if ok {
            Ok(ModeConfig { mode, tuning })
        } else {
            Err(ConfigError::Invalid(format!("{mode:?} cannot use tuning {tuning:?}")))
        }
    }

    /// Every valid codename, baseline first.
    pub fn all() -> Vec<ModeConfig> {
        ["baseline", "UM", "UB", "UC", "SM", "SB", "SC", "GB", "GC"]
            .iter()
            .map(|s| s.parse().expect("valid codename"))
            .collect()
    }

    pub fn grouping(self) -> Grouping {
        match self.mode {
            Mode::Unsynchronized | Mode::Baseline => Grouping::PerNode,
            _ => Grouping::PerIndex,
        }
    }

    pub fn leaves(self) -> LeafMix {
        match self.mode {
            Mode::Baseline => LeafMix::Plain,
            _ => LeafMix::WithLcf,
        }
    }
}

impl FromStr for ModeConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("baseline") {
            return Ok(ModeConfig::BASELINE);
        }
        let bad = || ConfigError::UnknownCodename(s.to_string());
        let mut chars = s.chars();
        let (Some(m), Some(t), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(bad());
        };
        let mode = match m.to_ascii_uppercase() {
            'U' => Mode::Unsynchronized,
            'S' => Mode::Synchronized,
            'G' => Mode::Global,
            _ => return Err(bad()),
        };
        let tuning = match t.to_ascii_uppercase() {
            'M' => Tuning::Mutation,
            'B' => Tuning::Backprop,
            'C' => Tuning::Both,
            _ => return Err(bad()),
        };
        ModeConfig::new(mode, tuning).map_err(|_| bad())
    }
}

impl fmt::Display for ModeConfig {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let m = match self.mode {
            Mode::Baseline => return f.write_str("baseline"),
            Mode::Unsynchronized => 'U',
            Mode::Synchronized => 'S',
            Mode::Global => 'G',
        };
        let t = match self.tuning {
            Tuning::Mutation => 'M',
            Tuning::Backprop => 'B',
            Tuning::Both => 'C',
            Tuning::None => '?',
        };
        write!(f, "{m}{t}")
    }
}

/// Engine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub max_genes: usize,
    pub max_depth: usize,
    pub pop_size: usize,
    pub tournament: usize,
    pub elite: usize,
    pub pr_x: f64,
    pub pr_m: f64,
    /// Share of crossovers that are high-level.
    pub pr_hlx: f64,
    /// Per-gene selection probability in high-level crossover.
    pub r_hlx: f64,
    pub pr_cm: f64,
    pub var_cm: f64,
    pub pr_wm: f64,
    pub var_wm: f64,
    pub budget: StepBudget,
    /// iRprop⁻ steps on the shared table per generation.
    pub global_steps: usize,
    /// Inclusive range of initial tree depths.
    pub init_depth: (usize, usize),
    pub const_range: (f64, f64),
    pub prims: Primitives,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_genes: 10,
            max_depth: 11,
            pop_size: 100,
            tournament: 10,
            elite: 15,
            pr_x: 0.84,
            pr_m: 0.14,
            pr_hlx: 0.2,
            r_hlx: 0.5,
            pr_cm: 0.05,
            var_cm: 0.1,
            pr_wm: 0.05,
            var_wm: 3.0,
            budget: StepBudget::default(),
            global_steps: 2,
            init_depth: (2, 6),
            const_range: (-10.0, 10.0),
            prims: Primitives::default(),
        }
    }
}

impl EngineConfig {
    /// Defaults adjusted for a configuration: smaller population, tournament
    /// and elite with backprop, no weights mutation without `M`.
    pub fn for_mode(mode: ModeConfig) -> Self {
        let mut cfg = EngineConfig::default();
        if mode.tuning.backprops() {
            cfg.pop_size = 50;
            cfg.tournament = 5;
            cfg.elite = 8;
        }
        if !mode.tuning.mutates() {
            cfg.pr_wm = 0.0;
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let probs = [
            ("pr_x", self.pr_x),
            ("pr_m", self.pr_m),
            ("pr_hlx", self.pr_hlx),
            ("r_hlx", self.r_hlx),
            ("pr_cm", self.pr_cm),
            ("pr_wm", self.pr_wm),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("{name} = {p} is not a probability")));
            }
        }
        let checks = [
            (self.pr_x + self.pr_m <= 1.0, "pr_x + pr_m exceeds 1"),
            (self.pr_cm + self.pr_wm <= 1.0, "pr_cm + pr_wm exceeds 1"),
            (self.elite < self.pop_size, "elite must be smaller than the population"),
            (self.tournament >= 1, "tournament size must be at least 1"),
            (self.tournament <= self.pop_size, "tournament larger than population"),
            (self.max_genes >= 1, "max_genes must be at least 1"),
            (self.init_depth.0 <= self.init_depth.1, "empty initial depth range"),
            (self.init_depth.1 <= self.max_depth, "initial depth exceeds max depth"),
            (self.var_cm >= 0.0 && self.var_wm >= 0.0, "negative variance"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(ConfigError::Invalid(msg.to_string()));
            }
        }
        Ok(())
    }

    pub fn tree_config(&self, d: usize, mode: ModeConfig) -> TreeGenConfig {
        let mut t = TreeGenConfig::new(d, mode.leaves());
        t.const_range = self.const_range;
        t
    }
}

/// Variation event drawn for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    HighCrossover,
    LowCrossover,
    WeightsMutation,
    ConstantMutation,
    SubtreeMutation,
    Reproduction,
}

impl Event {
    pub fn is_crossover(self) -> bool {
        matches!(self, Event::HighCrossover | Event::LowCrossover)
    }

    pub fn is_mutation(self) -> bool {
        matches!(
            self,
            Event::WeightsMutation | Event::ConstantMutation | Event::SubtreeMutation
        )
    }
}

pub fn draw_event<R: Rng + ?Sized>(rng: &mut R, cfg: &EngineConfig) -> Event {
    let r: f64 = rng.random();
    if r < cfg.pr_x {
        if rng.random_bool(cfg.pr_hlx) {
            Event::HighCrossover
        } else {
            Event::LowCrossover
        }
    } else if r < cfg.pr_x + cfg.pr_m {
        let u: f64 = rng.random();
        if u < cfg.pr_wm {
            Event::WeightsMutation
        } else if u < cfg.pr_wm + cfg.pr_cm {
            Event::ConstantMutation
        } else {
            Event::SubtreeMutation
        }
    } else {
        Event::Reproduction
    }
}

/// Everything one generation needs besides the population.
pub struct Engine<'a> {
    pub cfg: &'a EngineConfig,
    pub mode: ModeConfig,
    pub train: &'a Dataset,
    pub trees: TreeGenConfig,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: &'a EngineConfig, mode: ModeConfig, train: &'a Dataset) -> Self {
        let trees = cfg.tree_config(train.d(), mode);
        Engine { cfg, mode, train, trees }
    }

    /// Ramped half-and-half: one method and depth per gene, gene count uniform.
    pub fn random_individual<R: Rng + ?Sized>(&self, rng: &mut R) -> Individual {
        let k = rng.random_range(1..=self.cfg.max_genes);
        let genes = (0..k)
            .map(|_| {
                let depth = rng.random_range(self.cfg.init_depth.0..=self.cfg.init_depth.1);
                let method = if rng.random_bool(0.5) { Method::Grow } else { Method::Full };
                Gene::new(random_tree(rng, depth, method, &self.trees))
            })
            .collect();
        Individual::new(genes)
    }

    /// A fresh evaluated population, plus the shared table in global mode.
    pub fn init_population<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> (Vec<Individual>, Option<GlobalTable>) {
        let mut pop: Vec<Individual> =
            (0..self.cfg.pop_size).map(|_| self.random_individual(rng)).collect();
        let table = (self.mode.mode == Mode::Global).then(|| GlobalTable::identity(self.train.d()));
        if let Some(t) = &table {
            for ind in &mut pop {
                bind_to_table(&mut ind.genes, &t.weights);
            }
        }
        pop.par_iter_mut()
            .for_each(|ind| ind.evaluate(self.train, &self.cfg.prims));
        (pop, table)
    }

    /// Produces the next population. Returns it with the number of fitness
    /// evaluations spent.
    pub fn step_generation<R: Rng + ?Sized>(
        &self,
        pop: &[Individual],
        rng: &mut R,
        mut table: Option<&mut GlobalTable>,
    ) -> (Vec<Individual>, usize) {
        let cfg = self.cfg;
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&i, &j| pop[j].cmp_rank(&pop[i]));
        let mut next: Vec<Individual> = order[..cfg.elite].iter().map(|&i| pop[i].clone()).collect();

        let scope = match self.mode.mode {
            Mode::Synchronized => WeightScope::Group,
            _ => WeightScope::Node,
        };
        while next.len() < cfg.pop_size {
            let event = draw_event(rng, cfg);
            if event.is_crossover() {
                let p1 = &pop[tournament_select(pop, rng, cfg.tournament)];
                let p2 = &pop[tournament_select(pop, rng, cfg.tournament)];
                let (o1, o2) = match event {
                    Event::HighCrossover => high_level_xover(p1, p2, rng, cfg),
                    _ => low_level_xover(p1, p2, rng, cfg),
                };
                if next.len() + 1 < cfg.pop_size {
                    next.push(o1);
                    next.push(o2);
                } else if rng.random_bool(0.5) {
                    next.push(o1);
                } else {
                    next.push(o2);
                }
                continue;
            }
            let parent = &pop[tournament_select(pop, rng, cfg.tournament)];
            let child = match event {
                Event::WeightsMutation => match table.as_deref_mut() {
                    Some(t) => {
                        global_weights_mutation(parent, t, rng, cfg);
                        parent.clone()
                    }
                    None => weights_mutation(parent, rng, cfg, scope),
                },
                Event::ConstantMutation => constant_mutation(parent, rng, cfg, &self.trees),
                Event::SubtreeMutation => subtree_mutation(parent, rng, cfg, &self.trees),
                _ => parent.clone(),
            };
            next.push(child);
        }

        let prims = &cfg.prims;
        let train = self.train;
        let mode = self.mode;
        let evaluations: usize = next[cfg.elite..]
            .par_iter_mut()
            .map(|ind| {
                let mut spent = 0;
                if mode.mode == Mode::Synchronized {
                    spent += sync_repair(ind, train, prims);
                }
                if mode.mode == Mode::Global {
                    return spent;
                }
                let tuned = if mode.tuning.backprops() {
                    tune(ind, train, cfg.budget, mode.grouping(), prims)
                } else {
                    0
                };
                if tuned == 0 {
                    ind.evaluate(train, prims);
                    spent += 1;
                }
                spent + tuned
            })
            .sum();

        let evaluations = match table {
            Some(t) => {
                for ind in &mut next {
                    bind_to_table(&mut ind.genes, &t.weights);
                }
                evaluations + global_tune(&mut next, t, train, cfg.global_steps, prims)
            }
            None => evaluations,
        };
        (next, evaluations)
    }
}

/// Stopping rule for a run. At least one limit must be set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Budget {
    pub max_generations: Option<usize>,
    pub max_seconds: Option<f64>,
}

impl Budget {
    pub fn generations(g: usize) -> Self {
        Budget {
            max_generations: Some(g),
            max_seconds: None,
        }
    }

    pub fn seconds(s: f64) -> Self {
        Budget {
            max_generations: None,
            max_seconds: Some(s),
        }
    }
}

/// State after one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStat {
    pub generation: usize,
    /// Best training R² seen so far in the run.
    pub best_train_r2: f64,
    /// Cumulative fitness evaluations.
    pub evaluations: usize,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub mode: ModeConfig,
    pub best: Individual,
    pub train_r2: f64,
    pub test_r2: f64,
    pub lcf_ratio: f64,
    pub mean_depth: f64,
    pub generations: usize,
    /// Entry 0 is the initial population.
    pub history: Vec<GenerationStat>,
}

/// Evolves from `seed` until the budget runs out and scores the best
/// individual of the whole run on `test`.
pub fn run(
    cfg: &EngineConfig,
    mode: ModeConfig,
    train: &Dataset,
    test: &Dataset,
    budget: Budget,
    seed: u64,
) -> Result<RunResult, RunError> {
    cfg.validate()?;
    if budget.max_generations.is_none() && budget.max_seconds.is_none() {
        return Err(RunError::NoBudget);
    }
    if train.is_target_constant() {
        return Err(RunError::ConstantTarget);
    }
    if train.d() != test.d() {
        return Err(RunError::Dimension {
            train: train.d(),
            test: test.d(),
        });
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let engine = Engine::new(cfg, mode, train);
    let (mut pop, mut table) = engine.init_population(&mut rng);
    let mut evaluations = pop.len();
    let mut best = best_of(&pop).clone();
    let mut history = vec![GenerationStat {
        generation: 0,
        best_train_r2: best.fitness.train_r2,
        evaluations,
        elapsed_secs: start.elapsed().as_secs_f64(),
    }];

    let mut generation = 0;
    loop {
        if budget.max_generations.is_some_and(|g| generation >= g) {
            break;
        }
        if budget
            .max_seconds
            .is_some_and(|s| start.elapsed().as_secs_f64() >= s)
        {
            break;
        }
        let (next, spent) = engine.step_generation(&pop, &mut rng, table.as_mut());
        pop = next;
        evaluations += spent;
        generation += 1;
        let candidate = best_of(&pop);
        if candidate.cmp_rank(&best).is_gt() {
            best = candidate.clone();
        }
        history.push(GenerationStat {
            generation,
            best_train_r2: best.fitness.train_r2,
            evaluations,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
    }

    let test_r2 = if best.fitness.valid {
        score(&best.genes, &best.model, test, &cfg.prims)
    } else {
        f64::NEG_INFINITY
    };
    Ok(RunResult {
        seed,
        mode,
        train_r2: best.fitness.train_r2,
        test_r2,
        lcf_ratio: best.lcf_ratio(),
        mean_depth: best.mean_depth(),
        generations: generation,
        history,
        best,
    })
}

/// Best by rank; earliest wins ties.
pub fn best_of(pop: &[Individual]) -> &Individual {
    let mut best = &pop[0];
    for ind in &pop[1..] {
        if ind.cmp_rank(best).is_gt() {
            best = ind;
        }
    }
    best
}

/// Training fitness an individual would get from a fresh evaluation.
pub fn fresh_fitness(ind: &Individual, train: &Dataset, prims: &Primitives) -> FitnessReport {
    crate::fitness::evaluate(&ind.genes, train, prims).report
}
