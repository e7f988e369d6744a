//! Gradients of the training SSE with respect to LCF weights, and the
//! iRprop⁻ tuning loops that consume them.
//!
//! The loss is `L = Σᵢ (ŷᵢ − yᵢ)²` with `ŷ = c₀ + Σₖ cₖ·geneₖ(x)`, where the
//! top-level coefficients are refitted by least squares before every step
//! and held fixed during the backward pass.

mod rprop;

pub use rprop::{irprop_minus_step, RpropParams, RpropState};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bench::Dataset;
use crate::evolve::Individual;
use crate::exprtree::{column, FunctionKind, Gene, LcfWeights, LogSigForm, Node, Primitives};
use crate::fitness::{fit_outputs, Evaluation, LinearModel};

/// Per-individual update budget: `max(min, steps − total nodes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepBudget {
    pub steps: usize,
    pub min: usize,
}

impl Default for StepBudget {
    fn default() -> Self {
        StepBudget { steps: 25, min: 2 }
    }
}

impl StepBudget {
    pub fn steps_for(&self, node_total: usize) -> usize {
        self.steps.saturating_sub(node_total).max(self.min)
    }
}

/// How LCF partials are grouped into tunable weight sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// Each LCF leaf owns its weights.
    PerNode,
    /// All LCF leaves with the same feature index share one weight set.
    PerIndex,
}

/// Identity of one tunable weight set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeightKey {
    /// The `ordinal`-th LCF leaf (preorder) of gene `gene`.
    Site { gene: usize, ordinal: usize },
    /// Every LCF leaf with this feature index.
    Index(usize),
}

/// `∂L/∂a` and `∂L/∂b` for every weight set, flattened as `[a, b1..bd]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    pub keys: Vec<WeightKey>,
    pub d: usize,
    pub values: Vec<f64>,
    pub valid: bool,
}

impl GradientTable {
    pub fn get(&self, key: WeightKey) -> Option<&[f64]> {
        let pos = self.keys.iter().position(|&k| k == key)?;
        let w = 1 + self.d;
        Some(&self.values[pos * w..(pos + 1) * w])
    }
}

/// Forward values of every node, per gene in preorder.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    pub genes: Vec<Vec<Vec<f64>>>,
}

impl EvalTrace {
    pub fn gene_outputs(&self) -> Vec<Vec<f64>> {
        self.genes.iter().map(|g| g[0].clone()).collect()
    }
}

pub fn forward_trace(genes: &[Gene], x: &DMatrix<f64>, prims: &Primitives) -> EvalTrace {
    EvalTrace {
        genes: genes
            .iter()
            .map(|g| {
                let mut values = Vec::with_capacity(g.node_count());
                trace_node(g.root(), x, prims, &mut values);
                values
            })
            .collect(),
    }
}

fn trace_node(node: &Node, x: &DMatrix<f64>, prims: &Primitives, out: &mut Vec<Vec<f64>>) {
    let me = out.len();
    out.push(Vec::new());
    let value = match node {
        Node::Function { kind, children } => {
            let first = out.len();
            trace_node(&children[0], x, prims, out);
            let mut v = out[first].clone();
            if kind.arity() == 2 {
                let second = out.len();
                trace_node(&children[1], x, prims, out);
                kind.apply_in_place(&mut v, Some(&out[second]), prims);
            } else {
                kind.apply_in_place(&mut v, None, prims);
            }
            v
        }
        leaf => leaf.eval_unchecked(x, prims),
    };
    out[me] = value;
}

/// `∂f/∂child[child_index]` of one function at the given child values.
pub fn local_derivative(
    kind: FunctionKind,
    child_values: &[f64],
    child_index: usize,
    prims: &Primitives,
) -> f64 {
    debug_assert_eq!(child_values.len(), kind.arity());
    let x = child_values[0];
    match kind {
        FunctionKind::Add => 1.0,
        FunctionKind::Sub => {
            if child_index == 0 {
                1.0
            } else {
                -1.0
            }
        }
        FunctionKind::Mul => child_values[1 - child_index],
        FunctionKind::Sin => x.cos(),
        FunctionKind::Cos => -x.sin(),
        FunctionKind::Exp => x.exp(),
        FunctionKind::LogSig => {
            let s = FunctionKind::LogSig.unary(x, prims);
            match prims.logsig {
                LogSigForm::Decreasing => -s * (1.0 - s),
                LogSigForm::Increasing => s * (1.0 - s),
            }
        }
        FunctionKind::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        FunctionKind::Sinc => {
            if x.abs() < 1e-3 {
                // series of (x cos x − sin x)/x² around 0
                let x2 = x * x;
                -x / 3.0 + x * x2 / 30.0
            } else {
                (x * x.cos() - x.sin()) / (x * x)
            }
        }
        FunctionKind::Softplus => {
            let inc = Primitives {
                logsig: LogSigForm::Increasing,
            };
            FunctionKind::LogSig.unary(x, &inc)
        }
        FunctionKind::Gauss => -2.0 * x * (-x * x).exp(),
        FunctionKind::Pow2 => 2.0 * x,
        FunctionKind::Pow3 => 3.0 * x * x,
        FunctionKind::Pow4 => 4.0 * x.powi(3),
        FunctionKind::Pow5 => 5.0 * x.powi(4),
        FunctionKind::Pow6 => 6.0 * x.powi(5),
    }
}

/// Raw partials of one LCF leaf.
struct SiteGrad {
    gene: usize,
    ordinal: usize,
    index: usize,
    grad: Vec<f64>,
}

/// Reverse pass over all genes for the SSE loss under `model`.
pub fn backward(
    genes: &[Gene],
    trace: &EvalTrace,
    x: &DMatrix<f64>,
    y: &[f64],
    model: &LinearModel,
    grouping: Grouping,
    prims: &Primitives,
) -> GradientTable {
    let d = x.ncols();
    let yhat = model.predict(&trace.gene_outputs());
    let dloss: Vec<f64> = yhat.iter().zip(y).map(|(p, t)| 2.0 * (p - t)).collect();

    let mut sites = Vec::new();
    for (k, gene) in genes.iter().enumerate() {
        let ck = model.c[k];
        let adjoint: Vec<f64> = dloss.iter().map(|g| ck * g).collect();
        let mut walk = Walk {
            values: &trace.genes[k],
            x,
            prims,
            gene: k,
            ordinal: 0,
            pos: 0,
            skip: ck == 0.0,
            out: &mut sites,
        };
        walk.node(gene.root(), adjoint);
    }
    group(sites, d, grouping)
}

struct Walk<'a> {
    values: &'a [Vec<f64>],
    x: &'a DMatrix<f64>,
    prims: &'a Primitives,
    gene: usize,
    ordinal: usize,
    pos: usize,
    /// The gene's coefficient is zero: its leaves get exact zeros.
    skip: bool,
    out: &'a mut Vec<SiteGrad>,
}

impl Walk<'_> {
    fn node(&mut self, node: &Node, adjoint: Vec<f64>) {
        let me = self.pos;
        self.pos += 1;
        match node {
            Node::Function { kind, children } => {
                let ids: Vec<usize> = match children.len() {
                    1 => vec![me + 1],
                    _ => vec![me + 1, me + 1 + children[0].node_count()],
                };
                let mut child_adj: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
                let mut args = vec![0.0; ids.len()];
                for ci in 0..ids.len() {
                    let adj = adjoint
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| {
                            if a == 0.0 {
                                return 0.0;
                            }
                            for (slot, &id) in args.iter_mut().zip(&ids) {
                                *slot = self.values[id][i];
                            }
                            a * local_derivative(*kind, &args, ci, self.prims)
                        })
                        .collect();
                    child_adj.push(adj);
                }
                for (child, adj) in children.iter().zip(child_adj) {
                    self.node(child, adj);
                }
            }
            Node::Lcf { index, weights } => {
                let mut grad = vec![0.0; weights.len()];
                if !self.skip {
                    grad[0] = adjoint.iter().sum();
                    for j in 0..weights.b.len() {
                        grad[1 + j] = adjoint
                            .iter()
                            .zip(column(self.x, j))
                            .map(|(a, v)| a * v)
                            .sum();
                    }
                }
                self.out.push(SiteGrad {
                    gene: self.gene,
                    ordinal: self.ordinal,
                    index: *index,
                    grad,
                });
                self.ordinal += 1;
            }
            _ => {}
        }
    }
}

fn group(sites: Vec<SiteGrad>, d: usize, grouping: Grouping) -> GradientTable {
    let w = 1 + d;
    let (keys, values) = match grouping {
        Grouping::PerNode => {
            let keys = sites
                .iter()
                .map(|s| WeightKey::Site {
                    gene: s.gene,
                    ordinal: s.ordinal,
                })
                .collect();
            let values = sites.into_iter().flat_map(|s| s.grad).collect();
            (keys, values)
        }
        Grouping::PerIndex => {
            let mut indices: Vec<usize> = sites.iter().map(|s| s.index).collect();
            indices.sort_unstable();
            indices.dedup();
            let mut values = vec![0.0; indices.len() * w];
            for s in &sites {
                let pos = indices.binary_search(&s.index).unwrap();
                for (acc, g) in values[pos * w..(pos + 1) * w].iter_mut().zip(&s.grad) {
                    *acc += g;
                }
            }
            (indices.into_iter().map(WeightKey::Index).collect(), values)
        }
    };
    let valid = values.iter().all(|v: &f64| v.is_finite());
    GradientTable {
        keys,
        d,
        values,
        valid,
    }
}

/// Current weights laid out like [`backward`]'s table for `grouping`.
pub fn gather_weights(genes: &[Gene], grouping: Grouping) -> (Vec<WeightKey>, Vec<f64>) {
    let mut keys = Vec::new();
    let mut flat = Vec::new();
    match grouping {
        Grouping::PerNode => {
            for (k, gene) in genes.iter().enumerate() {
                let mut ordinal = 0;
                gene.root().visit(&mut |n| {
                    if let Node::Lcf { weights, .. } = n {
                        keys.push(WeightKey::Site { gene: k, ordinal });
                        weights.flatten_into(&mut flat);
                        ordinal += 1;
                    }
                });
            }
        }
        Grouping::PerIndex => {
            let mut first: Vec<(usize, &LcfWeights)> = Vec::new();
            for gene in genes {
                gene.root().visit(&mut |n| {
                    if let Node::Lcf { index, weights } = n {
                        if !first.iter().any(|(i, _)| i == index) {
                            first.push((*index, weights));
                        }
                    }
                });
            }
            first.sort_by_key(|(i, _)| *i);
            for (i, w) in first {
                keys.push(WeightKey::Index(i));
                w.flatten_into(&mut flat);
            }
        }
    }
    (keys, flat)
}

/// Writes flattened weights back into the LCF leaves they belong to.
pub fn scatter_weights(genes: &mut [Gene], keys: &[WeightKey], flat: &[f64]) {
    let d1 = if keys.is_empty() { 0 } else { flat.len() / keys.len() };
    let slice = |pos: usize| LcfWeights::from_flat(&flat[pos * d1..(pos + 1) * d1]);
    for (k, gene) in genes.iter_mut().enumerate() {
        let mut ordinal = 0;
        gene.for_each_lcf_mut(&mut |index, w| {
            let key_node = WeightKey::Site { gene: k, ordinal };
            ordinal += 1;
            if let Some(pos) = keys
                .iter()
                .position(|&key| key == key_node || key == WeightKey::Index(index))
            {
                *w = slice(pos);
            }
        });
    }
}

/// Sets every LCF leaf to the table entry of its index.
pub fn bind_to_table(genes: &mut [Gene], table: &[LcfWeights]) {
    for gene in genes {
        gene.for_each_lcf_mut(&mut |index, w| *w = table[index].clone());
    }
}

/// Value of one probe of the objective.
struct Probe<T> {
    loss: f64,
    grad: Option<Vec<f64>>,
    aux: T,
}

/// Runs `steps` iRprop⁻ updates, evaluating before each and after the last,
/// and leaves `params` at the best point seen. Stops early on a non-finite
/// loss or gradient. Returns the auxiliary data of the best probe, or `None`
/// when even the starting point is non-finite.
fn descend<T>(
    params: &mut Vec<f64>,
    state: &mut RpropState,
    steps: usize,
    mut probe: impl FnMut(&[f64], bool) -> Probe<T>,
) -> Option<T> {
    let mut best: Option<(f64, Vec<f64>, T)> = None;
    for s in 0..=steps {
        let p = probe(params, s < steps);
        if !p.loss.is_finite() {
            break;
        }
        let grad = p.grad;
        if best.as_ref().is_none_or(|b| p.loss < b.0) {
            best = Some((p.loss, params.clone(), p.aux));
        }
        match grad {
            Some(g) if s < steps && g.iter().all(|v| v.is_finite()) => {
                irprop_minus_step(state, &g, params)
            }
            _ => break,
        }
    }
    best.map(|(_, w, aux)| {
        *params = w;
        aux
    })
}

/// Tunes the LCF weights of one individual in place.
///
/// Runs `budget.steps_for(node_total)` updates of {refit, forward, backward,
/// iRprop⁻} and keeps the best-fitness weights seen. Individuals without LCF
/// leaves are left untouched. Returns the number of objective evaluations.
pub fn tune(
    ind: &mut Individual,
    train: &Dataset,
    budget: StepBudget,
    grouping: Grouping,
    prims: &Primitives,
) -> usize {
    let (keys, start) = gather_weights(&ind.genes, grouping);
    if keys.is_empty() {
        return 0;
    }
    let steps = budget.steps_for(ind.node_total());
    let mut state = match ind.rprop.take() {
        Some(s) if s.len() == start.len() => s,
        _ => RpropState::new(start.len(), RpropParams::default()),
    };
    let mut params = start.clone();
    let mut probes = 0;
    let genes = &mut ind.genes;
    let best = descend(&mut params, &mut state, steps, |w, need_grad| {
        probes += 1;
        scatter_weights(genes, &keys, w);
        let trace = forward_trace(genes, &train.x, prims);
        let eval = fit_outputs(&trace.gene_outputs(), &train.y);
        let grad = (need_grad && eval.report.valid).then(|| {
            let table = backward(genes, &trace, &train.x, &train.y, &eval.model, grouping, prims);
            table.values
        });
        Probe {
            loss: eval.sse,
            grad,
            aux: eval,
        }
    });
    match best {
        Some(eval) => {
            scatter_weights(&mut ind.genes, &keys, &params);
            ind.set_evaluation(eval);
        }
        None => {
            scatter_weights(&mut ind.genes, &keys, &start);
            ind.set_evaluation(Evaluation {
                model: ind.model.clone(),
                report: crate::fitness::FitnessReport::invalid(),
                sse: f64::INFINITY,
            });
        }
    }
    ind.rprop = Some(state);
    probes
}

/// Population-wide LCF weights used in globally synchronized mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTable {
    pub weights: Vec<LcfWeights>,
    pub rprop: RpropState,
}

impl GlobalTable {
    /// Identity weights for every index.
    pub fn identity(d: usize) -> Self {
        GlobalTable {
            weights: (0..d).map(|i| LcfWeights::identity(i, d)).collect(),
            rprop: RpropState::new(d * (1 + d), RpropParams::default()),
        }
    }

    pub fn d(&self) -> usize {
        self.weights.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.d() * (1 + self.d()));
        for w in &self.weights {
            w.flatten_into(&mut flat);
        }
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let w = 1 + self.d();
        for (i, slot) in self.weights.iter_mut().enumerate() {
            *slot = LcfWeights::from_flat(&flat[i * w..(i + 1) * w]);
        }
    }
}

/// Per-individual contribution to a global-mode probe.
struct GlobalPart {
    eval: Evaluation,
    grad: Option<Vec<f64>>,
}

/// Sums per-index partials over the whole population and updates the shared
/// table with one iRprop⁻ state, `steps` times. Every individual ends bound
/// to the best table seen and carries its fitness. Returns the number of
/// per-individual evaluations performed.
pub fn global_tune(
    population: &mut [Individual],
    table: &mut GlobalTable,
    train: &Dataset,
    steps: usize,
    prims: &Primitives,
) -> usize {
    let d = table.d();
    let width = d * (1 + d);
    let start = table.flatten();
    let mut params = start.clone();
    let mut work = table.clone();
    let mut state = table.rprop.clone();
    // Individuals valid at the starting point define the objective.
    let mut participants: Option<Vec<bool>> = None;
    let mut evaluations = 0;

    let best = descend(&mut params, &mut state, steps, |w, need_grad| {
        work.set_flat(w);
        let parts: Vec<GlobalPart> = population
            .par_iter_mut()
            .map(|ind| {
                bind_to_table(&mut ind.genes, &work.weights);
                let trace = forward_trace(&ind.genes, &train.x, prims);
                let eval = fit_outputs(&trace.gene_outputs(), &train.y);
                let grad = (need_grad && eval.report.valid).then(|| {
                    let t = backward(
                        &ind.genes,
                        &trace,
                        &train.x,
                        &train.y,
                        &eval.model,
                        Grouping::PerIndex,
                        prims,
                    );
                    let mut dense = vec![0.0; width];
                    for (pos, key) in t.keys.iter().enumerate() {
                        if let WeightKey::Index(i) = key {
                            dense[i * (1 + d)..(i + 1) * (1 + d)]
                                .copy_from_slice(&t.values[pos * (1 + d)..(pos + 1) * (1 + d)]);
                        }
                    }
                    dense
                });
                GlobalPart { eval, grad }
            })
            .collect();
        evaluations += parts.len();
        let active = participants
            .get_or_insert_with(|| parts.iter().map(|p| p.eval.report.valid).collect());

        // fixed summation order: individual index ascending
        let mut loss = 0.0;
        let mut grad = need_grad.then(|| vec![0.0; width]);
        for (part, &on) in parts.iter().zip(active.iter()) {
            if !on {
                continue;
            }
            loss += part.eval.sse;
            if let Some(total) = grad.as_mut() {
                match &part.grad {
                    Some(g) => total.iter_mut().zip(g).for_each(|(t, v)| *t += v),
                    None => total.iter_mut().for_each(|t| *t = f64::NAN),
                }
            }
        }
        Probe {
            loss,
            grad,
            aux: parts.into_iter().map(|p| p.eval).collect::<Vec<_>>(),
        }
    });

    match best {
        Some(evals) => {
            table.set_flat(&params);
            for (ind, eval) in population.iter_mut().zip(evals) {
                bind_to_table(&mut ind.genes, &table.weights);
                ind.set_evaluation(eval);
            }
        }
        None => {
            table.set_flat(&start);
            for ind in population.iter_mut() {
                bind_to_table(&mut ind.genes, &table.weights);
                ind.evaluate(train, prims);
            }
            evaluations += population.len();
        }
    }
    table.rprop = state;
    evaluations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Role;
    use crate::exprtree::eval_batch_with;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use FunctionKind::*;

    fn data(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        let d = rows[0].len();
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Dataset { name: "t".into(), x, y, role: Role::Train }
    }

    #[test]
    fn step_budget_formula() {
        let b = StepBudget::default();
        assert_eq!(b.steps_for(10), 15);
        assert_eq!(b.steps_for(23), 2);
        assert_eq!(b.steps_for(40), 2);
        for n in 1..100 {
            assert_eq!(b.steps_for(n), (25i64 - n as i64).max(2) as usize);
        }
    }

    #[test]
    fn trace_matches_eval() {
        let x = DMatrix::from_row_slice(1, 2, &[4.0, 9.0]);
        let g = Gene::new(Node::lcf(0, 2));
        let t = forward_trace(std::slice::from_ref(&g), &x, &Primitives::default());
        assert_eq!(t.genes[0][0], vec![4.0]);

        let x = DMatrix::from_row_slice(1, 1, &[std::f64::consts::FRAC_PI_2]);
        let g = Gene::new(Node::unary(Sin, Node::Var(0)));
        let t = forward_trace(std::slice::from_ref(&g), &x, &Primitives::default());
        assert!((t.genes[0][1][0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(t.genes[0][0][0], 1.0);
    }

    #[test]
    fn trace_root_is_bitwise_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = crate::exprtree::TreeGenConfig::new(3, crate::exprtree::LeafMix::WithLcf);
        let x = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-2.0..2.0));
        let prims = Primitives::default();
        for _ in 0..200 {
            let root = crate::exprtree::random_tree(&mut rng, 5, crate::exprtree::Method::Grow, &cfg);
            let gene = Gene::new(root.clone());
            let t = forward_trace(std::slice::from_ref(&gene), &x, &prims);
            let want = eval_batch_with(&root, &x, &prims).unwrap();
            assert_eq!(t.genes[0].len(), gene.node_count());
            let same = t.genes[0][0].iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{root}");
        }
    }

    #[test]
    fn derivative_singular_points() {
        let p = Primitives::default();
        assert_eq!(local_derivative(Sinc, &[0.0], 0, &p), 0.0);
        assert_eq!(local_derivative(Gauss, &[0.0], 0, &p), 0.0);
        assert_eq!(local_derivative(Pow2, &[3.0], 0, &p), 6.0);
        assert_eq!(local_derivative(Sub, &[1.0, 2.0], 1, &p), -1.0);
        assert_eq!(local_derivative(Mul, &[3.0, 5.0], 0, &p), 5.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for logsig in [LogSigForm::Decreasing, LogSigForm::Increasing] {
            let p = Primitives { logsig };
            for kind in FunctionKind::ALL {
                for _ in 0..100 {
                    let mut args: Vec<f64> = (0..kind.arity()).map(|_| rng.random_range(-3.0..3.0)).collect();
                    if kind == Sinc && args[0].abs() < 1e-3 {
                        args[0] = 0.5;
                    }
                    for ci in 0..kind.arity() {
                        let f = |v: f64| {
                            let mut a = args.clone();
                            a[ci] = v;
                            if kind.arity() == 2 { kind.binary(a[0], a[1]) } else { kind.unary(a[0], &p) }
                        };
                        let h = 1e-5 * (1.0 + args[ci].abs());
                        let fd = (f(args[ci] + h) - f(args[ci] - h)) / (2.0 * h);
                        let an = local_derivative(kind, &args, ci, &p);
                        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                        assert!(rel <= 1e-6 || (fd - an).abs() < 1e-9, "{kind} at {args:?}: {an} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn single_lcf_hand_gradient() {
        let train = data(vec![vec![2.0]], vec![0.0]);
        let genes = vec![Gene::new(Node::lcf(0, 1))];
        let trace = forward_trace(&genes, &train.x, &Primitives::default());
        let model = LinearModel { c0: 0.0, c: vec![1.0] };
        let t = backward(&genes, &trace, &train.x, &train.y, &model, Grouping::PerNode, &Primitives::default());
        assert_eq!(t.get(WeightKey::Site { gene: 0, ordinal: 0 }).unwrap(), &[4.0, 8.0]);
    }

    #[test]
    fn zero_coefficient_gene_has_zero_partials() {
        let train = data(vec![vec![2.0, 1.0], vec![1.0, -1.0]], vec![0.0, 1.0]);
        let genes = vec![
            Gene::new(Node::unary(Exp, Node::lcf(0, 2))),
            Gene::new(Node::unary(Sin, Node::lcf(1, 2))),
        ];
        let trace = forward_trace(&genes, &train.x, &Primitives::default());
        let model = LinearModel { c0: 0.3, c: vec![0.0, 2.0] };
        let t = backward(&genes, &trace, &train.x, &train.y, &model, Grouping::PerNode, &Primitives::default());
        assert!(t.get(WeightKey::Site { gene: 0, ordinal: 0 }).unwrap().iter().all(|&v| v == 0.0));
        assert!(t.get(WeightKey::Site { gene: 1, ordinal: 0 }).unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn per_index_sums_sites() {
        let train = data(vec![vec![0.5, 1.0], vec![-1.0, 2.0], vec![2.0, 0.1]], vec![1.0, 0.0, 3.0]);
        let genes = vec![
            Gene::new(Node::binary(Mul, Node::lcf(0, 2), Node::unary(Cos, Node::lcf(0, 2)))),
            Gene::new(Node::unary(Tanh, Node::lcf(1, 2))),
            Gene::new(Node::unary(Sin, Node::lcf(0, 2))),
        ];
        let p = Primitives::default();
        let trace = forward_trace(&genes, &train.x, &p);
        let model = LinearModel { c0: 0.1, c: vec![0.7, -1.0, 0.4] };
        let nodes = backward(&genes, &trace, &train.x, &train.y, &model, Grouping::PerNode, &p);
        let grouped = backward(&genes, &trace, &train.x, &train.y, &model, Grouping::PerIndex, &p);
        assert_eq!(grouped.keys, vec![WeightKey::Index(0), WeightKey::Index(1)]);
        let sites = [(0, 0), (0, 1), (2, 0)];
        for j in 0..3 {
            let want: f64 = sites
                .iter()
                .map(|&(g, o)| nodes.get(WeightKey::Site { gene: g, ordinal: o }).unwrap()[j])
                .sum();
            assert!((grouped.get(WeightKey::Index(0)).unwrap()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_scatter_round_trip() {
        let mut genes = vec![Gene::new(Node::binary(Add, Node::lcf(0, 2), Node::lcf(1, 2)))];
        let (keys, mut flat) = gather_weights(&genes, Grouping::PerNode);
        assert_eq!(keys.len(), 2);
        flat[0] = 5.0;
        scatter_weights(&mut genes, &keys, &flat);
        assert_eq!(gather_weights(&genes, Grouping::PerNode).1, flat);
    }

    #[test]
    fn tune_without_lcf_is_noop() {
        let train = data(vec![vec![1.0], vec![2.0], vec![3.0]], vec![1.0, 4.0, 9.0]);
        let mut ind = Individual::new(vec![Gene::new(Node::unary(Pow2, Node::Var(0)))]);
        let before = ind.clone();
        assert_eq!(tune(&mut ind, &train, StepBudget::default(), Grouping::PerNode, &Primitives::default()), 0);
        assert_eq!(ind, before);
    }

    #[test]
    fn tune_improves_a_rotated_fit() {
        // y = tanh(x1 - x2); start from tanh(lcf1) with identity weights
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let y = rows.iter().map(|r| (r[0] - r[1]).tanh()).collect();
        let train = data(rows, y);
        let p = Primitives::default();
        let mut ind = Individual::new(vec![Gene::new(Node::unary(Tanh, Node::lcf(0, 2)))]);
        ind.evaluate(&train, &p);
        let start = ind.fitness.train_r2;
        let mut last = start;
        for _ in 0..30 {
            tune(&mut ind, &train, StepBudget::default(), Grouping::PerNode, &p);
            assert!(ind.fitness.train_r2 >= last);
            last = ind.fitness.train_r2;
        }
        assert!(last > 0.999, "{start} -> {last}");
        let mut check = ind.clone();
        check.evaluate(&train, &p);
        assert_eq!(check.fitness, ind.fitness);
    }

    #[test]
    fn global_with_one_individual_equals_synchronized_tune() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let y = rows.iter().map(|r| (0.5 * r[0] + r[1]).sin()).collect();
        let train = data(rows, y);
        let p = Primitives::default();
        let genes = vec![Gene::new(Node::binary(Add, Node::unary(Sin, Node::lcf(0, 2)), Node::unary(Cos, Node::lcf(0, 2))))];
        let mut local = Individual::new(genes.clone());
        let steps = StepBudget::default().steps_for(local.node_total());
        tune(&mut local, &train, StepBudget::default(), Grouping::PerIndex, &p);

        let mut pop = vec![Individual::new(genes)];
        let mut table = GlobalTable::identity(2);
        global_tune(&mut pop, &mut table, &train, steps, &p);
        assert_eq!(pop[0].genes, local.genes);
        assert_eq!(pop[0].fitness, local.fitness);
        // index 1 never appears, so its weights never move
        assert!(table.weights[1].is_identity_for(1));
    }

    #[test]
    fn intercept_partial_vanishes_at_the_fit() {
        // the refitted c0 absorbs any shift of an LCF that enters linearly
        let train = data(vec![vec![1.0], vec![2.0], vec![3.0], vec![-1.0]], vec![1.0, 2.0, 2.0, 0.5]);
        let p = Primitives::default();
        let genes = vec![Gene::new(Node::binary(Add, Node::lcf(0, 1), Node::unary(Sin, Node::Var(0))))];
        let tr = forward_trace(&genes, &train.x, &p);
        let e = fit_outputs(&tr.gene_outputs(), &train.y);
        let t = backward(&genes, &tr, &train.x, &train.y, &e.model, Grouping::PerIndex, &p);
        assert!(t.values[0].abs() < 1e-12, "{:?}", t.values);
        assert!(t.values[1].abs() > 1e-6);
    }

    #[test]
    fn duplicated_population_follows_single_trajectory() {
        // sign-based steps ignore the doubled magnitude of the summed gradient
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let y = rows.iter().map(|r| (r[0] * r[1]).tanh()).collect();
        let train = data(rows, y);
        let p = Primitives::default();
        let one = Individual::new(vec![Gene::new(Node::binary(Mul, Node::unary(Tanh, Node::lcf(0, 2)), Node::lcf(1, 2)))]);
        let mut single = vec![one.clone()];
        let mut double = vec![one.clone(), one];
        let (mut t1, mut t2) = (GlobalTable::identity(2), GlobalTable::identity(2));
        global_tune(&mut single, &mut t1, &train, 6, &p);
        global_tune(&mut double, &mut t2, &train, 6, &p);
        assert_eq!(t1.weights, t2.weights);
        assert_eq!(double[0], double[1]);
        assert_eq!(single[0].fitness, double[0].fitness);
    }
}
