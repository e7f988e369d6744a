use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{EngineConfig, Individual};
use crate::backprop::GlobalTable;
use crate::bench::Dataset;
use crate::exprtree::{pick_node, random_tree, Gene, LcfWeights, Method, Node, Primitives, TreeGenConfig};
use crate::fitness::{evaluate, Evaluation, FitnessReport};

/// Index of the winner of a tournament of `t` uniform draws with replacement.
///
/// Ties on fitness go to fewer nodes, then uniformly among the rest.
pub fn tournament_select<R: Rng + ?Sized>(pop: &[Individual], rng: &mut R, t: usize) -> usize {
    assert!(!pop.is_empty() && t >= 1);
    let mut best = rng.random_range(0..pop.len());
    let mut tied = 1;
    for _ in 1..t {
        let c = rng.random_range(0..pop.len());
        match pop[c].cmp_rank(&pop[best]) {
            std::cmp::Ordering::Greater => {
                best = c;
                tied = 1;
            }
            std::cmp::Ordering::Equal => {
                tied += 1;
                if rng.random_range(0..tied) == 0 {
                    best = c;
                }
            }
            std::cmp::Ordering::Less => {}
        }
    }
    best
}

/// Gene-swapping crossover with independent per-gene selection masks.
pub fn high_level_xover<R: Rng + ?Sized>(
    p1: &Individual,
    p2: &Individual,
    rng: &mut R,
    cfg: &EngineConfig,
) -> (Individual, Individual) {
    let m1: Vec<bool> = p1.genes.iter().map(|_| rng.random_bool(cfg.r_hlx)).collect();
    let m2: Vec<bool> = p2.genes.iter().map(|_| rng.random_bool(cfg.r_hlx)).collect();
    high_level_xover_masked(p1, p2, &m1, &m2, rng, cfg.max_genes)
}

/// [`high_level_xover`] with given masks. Selected genes of each parent move
/// to the other offspring, appended after the genes that stay.
pub fn high_level_xover_masked<R: Rng + ?Sized>(
    p1: &Individual,
    p2: &Individual,
    m1: &[bool],
    m2: &[bool],
    rng: &mut R,
    max_genes: usize,
) -> (Individual, Individual) {
    let split = |p: &Individual, m: &[bool]| {
        let (mut keep, mut give) = (Vec::new(), Vec::new());
        for (g, &sel) in p.genes.iter().zip(m) {
            if sel {
                give.push(g.clone());
            } else {
                keep.push(g.clone());
            }
        }
        (keep, give)
    };
    let (keep1, give1) = split(p1, m1);
    let (keep2, give2) = split(p2, m2);
    let o1 = assemble(keep1, give2, p1, rng, max_genes);
    let o2 = assemble(keep2, give1, p2, rng, max_genes);
    (o1, o2)
}

fn assemble<R: Rng + ?Sized>(
    mut genes: Vec<Gene>,
    mut incoming: Vec<Gene>,
    origin: &Individual,
    rng: &mut R,
    max_genes: usize,
) -> Individual {
    let room = max_genes.saturating_sub(genes.len());
    if incoming.len() > room {
        incoming.shuffle(rng);
        incoming.truncate(room);
    }
    genes.extend(incoming);
    if genes.is_empty() {
        genes.push(origin.genes[rng.random_range(0..origin.genes.len())].clone());
    }
    let mut o = Individual::new(genes);
    o.structural_change();
    o
}

/// Subtree crossover between one uniformly chosen gene of each parent.
/// An offspring whose gene would exceed the depth limit is its parent.
pub fn low_level_xover<R: Rng + ?Sized>(
    p1: &Individual,
    p2: &Individual,
    rng: &mut R,
    cfg: &EngineConfig,
) -> (Individual, Individual) {
    let k1 = rng.random_range(0..p1.genes.len());
    let k2 = rng.random_range(0..p2.genes.len());
    let g1 = &p1.genes[k1];
    let g2 = &p2.genes[k2];
    let l1 = pick_node(rng, g1.root());
    let l2 = pick_node(rng, g2.root());
    let s1 = g1.root().subtree(l1).expect("picked node").clone();
    let s2 = g2.root().subtree(l2).expect("picked node").clone();
    let child = |p: &Individual, k: usize, gene: Gene| {
        if gene.depth() > cfg.max_depth {
            return p.clone();
        }
        let mut o = p.clone();
        o.genes[k] = gene;
        o.structural_change();
        o
    };
    let o1 = child(p1, k1, g1.replace(l1, s2).expect("picked node"));
    let o2 = child(p2, k2, g2.replace(l2, s1).expect("picked node"));
    (o1, o2)
}

/// Replaces a uniformly chosen node of a uniformly chosen gene with a grown
/// random tree that keeps the gene within the depth limit.
pub fn subtree_mutation<R: Rng + ?Sized>(
    ind: &Individual,
    rng: &mut R,
    cfg: &EngineConfig,
    trees: &TreeGenConfig,
) -> Individual {
    let k = rng.random_range(0..ind.genes.len());
    let gene = &ind.genes[k];
    let loc = pick_node(rng, gene.root());
    let at = gene.root().depth_of(loc).expect("picked node");
    let sub = random_tree(rng, cfg.max_depth.saturating_sub(at), Method::Grow, trees);
    let mut o = ind.clone();
    o.genes[k] = gene.replace(loc, sub).expect("picked node");
    o.structural_change();
    o
}

/// Adds Gaussian noise to one uniformly chosen constant leaf; falls back to
/// subtree mutation when there is none.
pub fn constant_mutation<R: Rng + ?Sized>(
    ind: &Individual,
    rng: &mut R,
    cfg: &EngineConfig,
    trees: &TreeGenConfig,
) -> Individual {
    let total: usize = ind.genes.iter().map(|g| g.leaf_counts().consts).sum();
    if total == 0 {
        return subtree_mutation(ind, rng, cfg, trees);
    }
    let target = rng.random_range(0..total);
    let noise = Normal::new(0.0, cfg.var_cm.sqrt()).expect("variance").sample(rng);
    let mut o = ind.clone();
    let mut seen = 0;
    for gene in &mut o.genes {
        gene.for_each_const_mut(&mut |v| {
            if seen == target {
                *v += noise;
            }
            seen += 1;
        });
    }
    o.fitness = FitnessReport::invalid();
    o
}

/// Which LCF leaves a weights mutation addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScope {
    /// One leaf.
    Node,
    /// Every leaf sharing the chosen index.
    Group,
}

/// Offsets every weight of one uniformly chosen LCF leaf (or index group)
/// by i.i.d. Gaussian noise. Without LCF leaves the individual is returned
/// unchanged.
pub fn weights_mutation<R: Rng + ?Sized>(
    ind: &Individual,
    rng: &mut R,
    cfg: &EngineConfig,
    scope: WeightScope,
) -> Individual {
    let mut o = ind.clone();
    let noise = Normal::new(0.0, cfg.var_wm.sqrt()).expect("variance");
    match scope {
        WeightScope::Node => {
            let total: usize = ind.genes.iter().map(|g| g.leaf_counts().lcfs).sum();
            if total == 0 {
                return o;
            }
            let target = rng.random_range(0..total);
            let mut seen = 0;
            for gene in &mut o.genes {
                gene.for_each_lcf_mut(&mut |_, w| {
                    if seen == target {
                        offset(w, &noise, rng);
                    }
                    seen += 1;
                });
            }
        }
        WeightScope::Group => {
            let indices = lcf_indices(&ind.genes);
            if indices.is_empty() {
                return o;
            }
            let index = indices[rng.random_range(0..indices.len())];
            let d1 = first_weights(&ind.genes, index).expect("present").len();
            let delta: Vec<f64> = (0..d1).map(|_| noise.sample(rng)).collect();
            for gene in &mut o.genes {
                gene.for_each_lcf_mut(&mut |i, w| {
                    if i == index {
                        add_flat(w, &delta);
                    }
                });
            }
        }
    }
    o.fitness = FitnessReport::invalid();
    o
}

/// Weights mutation against the shared table: offsets the entry of one
/// uniformly chosen index used by `ind`. Returns whether anything changed.
pub fn global_weights_mutation<R: Rng + ?Sized>(
    ind: &Individual,
    table: &mut GlobalTable,
    rng: &mut R,
    cfg: &EngineConfig,
) -> bool {
    let indices = lcf_indices(&ind.genes);
    if indices.is_empty() {
        return false;
    }
    let index = indices[rng.random_range(0..indices.len())];
    let noise = Normal::new(0.0, cfg.var_wm.sqrt()).expect("variance");
    offset(&mut table.weights[index], &noise, rng);
    true
}

fn offset<R: Rng + ?Sized>(w: &mut LcfWeights, noise: &Normal<f64>, rng: &mut R) {
    w.a += noise.sample(rng);
    for b in &mut w.b {
        *b += noise.sample(rng);
    }
}

fn add_flat(w: &mut LcfWeights, delta: &[f64]) {
    w.a += delta[0];
    for (b, d) in w.b.iter_mut().zip(&delta[1..]) {
        *b += d;
    }
}

/// Sorted distinct LCF indices present in the genes.
pub fn lcf_indices(genes: &[Gene]) -> Vec<usize> {
    let mut out = Vec::new();
    for g in genes {
        g.root().visit(&mut |n| {
            if let Node::Lcf { index, .. } = n {
                out.push(*index);
            }
        });
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn first_weights(genes: &[Gene], index: usize) -> Option<LcfWeights> {
    distinct_weights(genes, index).into_iter().next()
}

/// Distinct weight sets carried by LCF leaves of `index`, in preorder of
/// first appearance.
pub fn distinct_weights(genes: &[Gene], index: usize) -> Vec<LcfWeights> {
    let mut out: Vec<LcfWeights> = Vec::new();
    for g in genes {
        g.root().visit(&mut |n| {
            if let Node::Lcf { index: i, weights } = n {
                if *i == index && !out.contains(weights) {
                    out.push(weights.clone());
                }
            }
        });
    }
    out
}

/// True when all LCF leaves with the same index carry identical weights.
pub fn is_synchronized(genes: &[Gene]) -> bool {
    lcf_indices(genes)
        .into_iter()
        .all(|i| distinct_weights(genes, i).len() <= 1)
}

fn element_mean(sets: &[LcfWeights]) -> LcfWeights {
    let n = sets.len() as f64;
    let a = sets.iter().map(|w| w.a).sum::<f64>() / n;
    let b = (0..sets[0].b.len())
        .map(|j| sets.iter().map(|w| w.b[j]).sum::<f64>() / n)
        .collect();
    LcfWeights { a, b }
}

fn set_group(genes: &mut [Gene], index: usize, weights: &LcfWeights) {
    for g in genes {
        g.for_each_lcf_mut(&mut |i, w| {
            if i == index {
                *w = weights.clone();
            }
        });
    }
}

/// Resolves conflicting weight sets per index. For each index (ascending)
/// with at least two distinct sets, the individual is scored under every
/// set and under their element-wise mean; the best is adopted by the whole
/// group, earlier candidates winning ties. If every candidate is invalid the
/// mean is adopted and the individual marked invalid.
///
/// Returns the number of evaluations spent; 0 means nothing conflicted.
pub fn sync_repair(ind: &mut Individual, train: &Dataset, prims: &Primitives) -> usize {
    let mut evaluations = 0;
    let mut last: Option<Evaluation> = None;
    for index in lcf_indices(&ind.genes) {
        let sets = distinct_weights(&ind.genes, index);
        if sets.len() < 2 {
            continue;
        }
        let mean = element_mean(&sets);
        let mut candidates = sets;
        candidates.push(mean.clone());
        let mut best: Option<(LcfWeights, Evaluation)> = None;
        for c in candidates {
            set_group(&mut ind.genes, index, &c);
            let eval = evaluate(&ind.genes, train, prims);
            evaluations += 1;
            let better = match &best {
                None => true,
                Some((_, b)) => eval.report.cmp_quality(&b.report).is_gt(),
            };
            if better {
                best = Some((c, eval));
            }
        }
        let (w, eval) = best.expect("candidates");
        if eval.report.valid {
            set_group(&mut ind.genes, index, &w);
            last = Some(eval);
        } else {
            set_group(&mut ind.genes, index, &mean);
            last = Some(evaluate(&ind.genes, train, prims));
            evaluations += 1;
        }
    }
    if let Some(eval) = last {
        ind.set_evaluation(eval);
    }
    evaluations
}
