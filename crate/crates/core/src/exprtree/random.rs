use rand::Rng;

use super::{FunctionKind, Node, NodeLocator};

/// Tree construction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Leaves may appear at any depth up to the limit.
    Grow,
    /// Every leaf sits exactly at the depth limit.
    Full,
}

/// Which leaf kinds random trees may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafMix {
    /// Const and Var, 1/2 each.
    Plain,
    /// Const, Var and LCF, 1/3 each.
    WithLcf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeGenConfig {
    /// Problem dimensionality.
    pub d: usize,
    pub leaves: LeafMix,
    /// Constants are drawn uniformly from this closed range.
    pub const_range: (f64, f64),
    /// Probability that `Grow` places a function above the depth limit.
    pub grow_function_prob: f64,
}

impl TreeGenConfig {
    pub fn new(d: usize, leaves: LeafMix) -> Self {
        TreeGenConfig {
            d,
            leaves,
            const_range: (-10.0, 10.0),
            grow_function_prob: 0.5,
        }
    }
}

/// Builds a random tree of edge depth at most `max_depth`.
///
/// LCF leaves start with identity weights for their index.
pub fn random_tree<R: Rng + ?Sized>(
    rng: &mut R,
    max_depth: usize,
    method: Method,
    cfg: &TreeGenConfig,
) -> Node {
    let place_function = max_depth > 0
        && match method {
            Method::Full => true,
            Method::Grow => rng.random_bool(cfg.grow_function_prob),
        };
    if !place_function {
        return random_leaf(rng, cfg);
    }
    let kind = FunctionKind::ALL[rng.random_range(0..FunctionKind::ALL.len())];
    let children = (0..kind.arity())
        .map(|_| random_tree(rng, max_depth - 1, method, cfg))
        .collect();
    Node::Function { kind, children }
}

fn random_leaf<R: Rng + ?Sized>(rng: &mut R, cfg: &TreeGenConfig) -> Node {
    let kinds = match cfg.leaves {
        LeafMix::Plain => 2,
        LeafMix::WithLcf => 3,
    };
    match rng.random_range(0..kinds) {
        0 => {
            let (lo, hi) = cfg.const_range;
            Node::Const(rng.random_range(lo..=hi))
        }
        1 => Node::Var(rng.random_range(0..cfg.d)),
        _ => Node::lcf(rng.random_range(0..cfg.d), cfg.d),
    }
}

/// Uniform choice over all nodes of the tree.
pub fn pick_node<R: Rng + ?Sized>(rng: &mut R, root: &Node) -> NodeLocator {
    NodeLocator(rng.random_range(0..root.node_count()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn leaf_depths(node: &Node, depth: usize, out: &mut Vec<usize>) {
        if node.is_leaf() {
            out.push(depth);
        }
        for c in node.children() {
            leaf_depths(c, depth + 1, out);
        }
    }

    #[test]
    fn depth_zero_is_a_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = TreeGenConfig::new(3, LeafMix::WithLcf);
        for method in [Method::Grow, Method::Full] {
            for _ in 0..50 {
                assert!(random_tree(&mut rng, 0, method, &cfg).is_leaf());
            }
        }
    }

    #[test]
    fn full_trees_have_all_leaves_at_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = TreeGenConfig::new(2, LeafMix::Plain);
        for _ in 0..200 {
            let t = random_tree(&mut rng, 2, Method::Full, &cfg);
            let mut depths = Vec::new();
            leaf_depths(&t, 0, &mut depths);
            assert!(depths.iter().all(|&d| d == 2), "{t}");
        }
    }

    #[test]
    fn grow_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = TreeGenConfig::new(2, LeafMix::WithLcf);
        for max in 0..8 {
            for _ in 0..100 {
                let t = random_tree(&mut rng, max, Method::Grow, &cfg);
                assert!(t.depth() <= max);
                t.validate(2).unwrap();
            }
        }
    }

    #[test]
    fn every_kind_and_leaf_variant_appears() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = TreeGenConfig::new(3, LeafMix::WithLcf);
        let mut kinds = HashSet::new();
        let (mut consts, mut vars, mut lcfs) = (0, 0, 0);
        for i in 0..10_000 {
            let method = if i % 2 == 0 { Method::Grow } else { Method::Full };
            let t = random_tree(&mut rng, 3, method, &cfg);
            t.visit(&mut |n| match n {
                Node::Function { kind, .. } => {
                    kinds.insert(*kind);
                }
                Node::Const(c) => {
                    assert!((-10.0..=10.0).contains(c));
                    consts += 1
                }
                Node::Var(_) => vars += 1,
                Node::Lcf { index, weights } => {
                    assert!(weights.is_identity_for(*index));
                    lcfs += 1
                }
            });
        }
        assert_eq!(kinds.len(), 16);
        assert!(consts > 0 && vars > 0 && lcfs > 0);
        // 1/3 each; generous band for 10^4 trees worth of leaves
        let total = (consts + vars + lcfs) as f64;
        for c in [consts, vars, lcfs] {
            assert!((c as f64 / total - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn plain_mix_never_emits_lcf() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = TreeGenConfig::new(3, LeafMix::Plain);
        for _ in 0..2000 {
            let t = random_tree(&mut rng, 4, Method::Grow, &cfg);
            t.visit(&mut |n| assert!(!matches!(n, Node::Lcf { .. })));
        }
    }

    #[test]
    fn pick_is_uniform() {
        // (mul (sin x1) (add x1 (cos x2))) has 7 nodes
        use FunctionKind::*;
        let t = Node::binary(
            Mul,
            Node::unary(Sin, Node::Var(0)),
            Node::binary(Add, Node::Var(0), Node::unary(Cos, Node::Var(1))),
        );
        assert_eq!(t.node_count(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut counts = [0usize; 7];
        let draws = 10_000;
        for _ in 0..draws {
            counts[pick_node(&mut rng, &t).0] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 7.0).abs() <= 0.02);
        }
    }
}
