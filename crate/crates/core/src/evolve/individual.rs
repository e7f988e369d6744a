use std::cmp::Ordering;

use crate::backprop::RpropState;
use crate::bench::Dataset;
use crate::exprtree::{Gene, Primitives};
use crate::fitness::{evaluate, lcf_ratio, mean_gene_depth, Evaluation, FitnessReport, LinearModel};

/// A multi-gene model: genes, their fitted top-level combination and the
/// cached training fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genes: Vec<Gene>,
    pub model: LinearModel,
    pub fitness: FitnessReport,
    /// Step sizes carried between tuning rounds; `None` after a structural edit.
    pub rprop: Option<RpropState>,
}

impl Individual {
    /// An unevaluated individual.
    pub fn new(genes: Vec<Gene>) -> Self {
        let k = genes.len();
        Individual {
            genes,
            model: LinearModel { c0: 0.0, c: vec![0.0; k] },
            fitness: FitnessReport::invalid(),
            rprop: None,
        }
    }

    pub fn node_total(&self) -> usize {
        self.genes.iter().map(Gene::node_count).sum()
    }

    pub fn max_depth(&self) -> usize {
        self.genes.iter().map(Gene::depth).max().unwrap_or(0)
    }

    pub fn evaluate(&mut self, train: &Dataset, prims: &Primitives) {
        let eval = evaluate(&self.genes, train, prims);
        self.set_evaluation(eval);
    }

    pub fn set_evaluation(&mut self, eval: Evaluation) {
        self.model = eval.model;
        self.fitness = eval.report;
    }

    /// Drops tuning memory; used after any structural change.
    pub fn structural_change(&mut self) {
        self.rprop = None;
        self.fitness = FitnessReport::invalid();
    }

    pub fn lcf_ratio(&self) -> f64 {
        lcf_ratio(&self.genes)
    }

    pub fn mean_depth(&self) -> f64 {
        mean_gene_depth(&self.genes)
    }

    /// Selection order: higher fitness first, then fewer nodes.
    /// `Ordering::Greater` means `self` ranks better.
    pub fn cmp_rank(&self, other: &Individual) -> Ordering {
        self.fitness
            .cmp_quality(&other.fitness)
            .then_with(|| other.node_total().cmp(&self.node_total()))
    }
}
