#![allow(dead_code)]

use lcfgp::backprop::{backward, forward_trace, gather_weights, scatter_weights, Grouping};
use lcfgp::bench::{Dataset, Role};
use lcfgp::exprtree::{
    random_tree, FunctionKind, Gene, LeafMix, Method, Node, Primitives, TreeGenConfig,
};
use lcfgp::fitness::{fit_outputs, LinearModel};
use nalgebra::DMatrix;
use rand::Rng;

/// Solves `[1 | G]ᵀ[1 | G] β = [1 | G]ᵀ y` by Gaussian elimination with
/// partial pivoting. Returns `(c0, c)`.
#[allow(clippy::needless_range_loop)]
pub fn normal_equations(columns: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len();
    let k = columns.len() + 1;
    let col = |j: usize, i: usize| if j == 0 { 1.0 } else { columns[j - 1][i] };
    let mut a = vec![vec![0.0; k + 1]; k];
    for r in 0..k {
        for c in 0..k {
            a[r][c] = (0..n).map(|i| col(r, i) * col(c, i)).sum();
        }
        a[r][k] = (0..n).map(|i| col(r, i) * y[i]).sum();
    }
    for p in 0..k {
        let pivot = (p..k).max_by(|&x, &z| a[x][p].abs().total_cmp(&a[z][p].abs())).unwrap();
        a.swap(p, pivot);
        for r in p + 1..k {
            let f = a[r][p] / a[p][p];
            for c in p..=k {
                a[r][c] -= f * a[p][c];
            }
        }
    }
    let mut beta = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| a[r][c] * beta[c]).sum();
        beta[r] = (a[r][k] - s) / a[r][r];
    }
    (beta[0], beta[1..].to_vec())
}

pub fn dataset<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize) -> Dataset {
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Dataset::new("random", x, y, Role::Train).unwrap()
}

fn sse_with(genes: &[Gene], model: &LinearModel, train: &Dataset, prims: &Primitives) -> f64 {
    let outputs: Vec<Vec<f64>> = genes.iter().map(|g| g.eval(&train.x, prims)).collect();
    model
        .predict(&outputs)
        .iter()
        .zip(&train.y)
        .map(|(p, t)| (p - t).powi(2))
        .sum()
}

/// True when every Sinc argument stays at least `margin` away from zero and
/// every node value is bounded by `bound`.
pub fn well_conditioned(genes: &[Gene], x: &DMatrix<f64>, prims: &Primitives, margin: f64, bound: f64) -> bool {
    let trace = forward_trace(genes, x, prims);
    for (g, values) in genes.iter().zip(&trace.genes) {
        if values.iter().flatten().any(|v| !v.is_finite() || v.abs() > bound) {
            return false;
        }
        let mut pos = 0;
        let mut ok = true;
        sinc_inputs(g.root(), &mut pos, &mut |child| {
            if values[child].iter().any(|v: &f64| v.abs() < margin) {
                ok = false;
            }
        });
        if !ok {
            return false;
        }
    }
    true
}

fn sinc_inputs(node: &Node, pos: &mut usize, f: &mut impl FnMut(usize)) {
    let me = *pos;
    *pos += 1;
    if let Node::Function { kind, children } = node {
        if *kind == FunctionKind::Sinc {
            f(me + 1);
        }
        for c in children {
            sinc_inputs(c, pos, f);
        }
    }
}

/// Central difference at `h` refined by one Richardson step with `h/2`.
pub fn central_difference(f: impl Fn(f64) -> f64, w: f64, h: f64) -> f64 {
    let d = |h: f64| (f(w + h) - f(w - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Relative error with a unit floor on the scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest relative error between analytic partials and central finite
/// differences of the SSE with the top-level model frozen at its fit.
pub fn gradient_error(genes: &[Gene], train: &Dataset, prims: &Primitives, grouping: Grouping) -> f64 {
    let trace = forward_trace(genes, &train.x, prims);
    let model = fit_outputs(&trace.gene_outputs(), &train.y).model;
    let table = backward(genes, &trace, &train.x, &train.y, &model, grouping, prims);
    let (keys, flat) = gather_weights(genes, grouping);
    assert_eq!(keys, table.keys);
    let mut worst: f64 = 0.0;
    for j in 0..flat.len() {
        let h = 1e-6 * (1.0 + flat[j].abs());
        let at = |v: f64| {
            let mut w = flat.clone();
            w[j] = v;
            let mut g = genes.to_vec();
            scatter_weights(&mut g, &keys, &w);
            sse_with(&g, &model, train, prims)
        };
        let fd = central_difference(at, flat[j], h);
        worst = worst.max(rel_err(table.values[j], fd));
    }
    worst
}

/// Random multi-gene individual with LCF leaves. Weights are perturbed
/// away from identity so every partial is exercised.
pub fn random_genes<R: Rng + ?Sized>(rng: &mut R, d: usize, max_depth: usize) -> Vec<Gene> {
    let cfg = TreeGenConfig::new(d, LeafMix::WithLcf);
    let k = rng.random_range(1..=3);
    (0..k)
        .map(|_| {
            let depth = rng.random_range(1..=max_depth);
            let method = if rng.random_bool(0.5) { Method::Grow } else { Method::Full };
            let mut root = random_tree(rng, depth, method, &cfg);
            root.for_each_lcf_mut(&mut |_, w| {
                w.a += rng.random_range(-0.5..0.5);
                for b in &mut w.b {
                    *b += rng.random_range(-0.5..0.5);
                }
            });
            Gene::new(root)
        })
        .collect()
}

/// Draws until the individual has an LCF and is well conditioned.
pub fn conditioned_genes<R: Rng + ?Sized>(rng: &mut R, train: &Dataset, max_depth: usize, prims: &Primitives) -> Vec<Gene> {
    loop {
        let genes = random_genes(rng, train.d(), max_depth);
        let has_lcf = genes.iter().any(|g| g.leaf_counts().lcfs > 0);
        if has_lcf && well_conditioned(&genes, &train.x, prims, 1e-3, 1e3) && tame_model(&genes, train, prims, 1e3) {
            return genes;
        }
    }
}

/// True when no fitted top-level term exceeds `bound` in magnitude.
pub fn tame_model(genes: &[Gene], train: &Dataset, prims: &Primitives, bound: f64) -> bool {
    let outputs: Vec<Vec<f64>> = genes.iter().map(|g| g.eval(&train.x, prims)).collect();
    let e = fit_outputs(&outputs, &train.y);
    e.report.valid
        && e.model.c0.abs() <= bound
        && e.model.c.iter().zip(&outputs).all(|(c, o)| o.iter().all(|v| (c * v).abs() <= bound))
}
