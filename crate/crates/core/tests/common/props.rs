//! Closedness and tiling-inversion properties over random relations.

use proptest::prelude::*;
use tra::ia::PartitionSpec;
use tra::model::frontier_of;
use tra::ops::{Aggregator, Combine, KernelCall};
use tra::rng;
use tra::tra::{eval_expr, Catalog, TraExpr};
use tra::{ArrayType, Key, KernelRegistry, TensorRelation};

fn keys_below(frontier: &[u64]) -> Vec<Key> {
    let mut out = vec![vec![]];
    for &f in frontier {
        out = out.into_iter().flat_map(|k: Key| (0..f).map(move |i| [k.clone(), vec![i]].concat())).collect();
    }
    out
}

pub fn relation(frontier: &[u64], bound: &[usize], seed: u64, stream: u64) -> TensorRelation {
    let ty = ArrayType::new(bound.to_vec()).unwrap();
    let tuples = keys_below(frontier)
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k, rng::integers(seed, stream * 1000 + i as u64, ty.clone(), 5)))
        .collect();
    TensorRelation::from_tuples(frontier.len(), ty, tuples).unwrap()
}

pub fn shape() -> impl Strategy<Value = (Vec<u64>, Vec<usize>)> {
    (prop::collection::vec(1u64..4, 1..4), prop::collection::vec(1usize..5, 1..3))
}

#[derive(Debug, Clone)]
pub enum Op {
    Aggregate(Vec<usize>),
    Join { keys: usize, other: Vec<u64> },
    Transform(&'static str),
    Tile { dim: usize, size: usize },
    Concat { key_dim: usize, array_dim: usize },
}

fn op_for(frontier: Vec<u64>, bound: Vec<usize>) -> impl Strategy<Value = Op> {
    let k = frontier.len();
    let r = bound.len();
    let b2 = bound.clone();
    prop_oneof![
        Just((0..k).collect::<Vec<_>>()).prop_shuffle().prop_flat_map(move |p| (0..=k).prop_map(move |n| Op::Aggregate(p[..n].to_vec()))),
        (1..=k, prop::collection::vec(1u64..4, 0..3)).prop_map(|(keys, other)| Op::Join { keys, other }),
        prop::sample::select(vec!["relu", "idOp"]).prop_map(Op::Transform),
        (0..r).prop_flat_map(move |dim| {
            let divisors: Vec<usize> = (1..=b2[dim]).filter(|d| b2[dim].is_multiple_of(*d)).collect();
            prop::sample::select(divisors).prop_map(move |size| Op::Tile { dim, size })
        }),
        (0..k, 0..r).prop_map(|(key_dim, array_dim)| Op::Concat { key_dim, array_dim }),
    ]
}

pub fn case() -> impl Strategy<Value = (Vec<u64>, Vec<usize>, Op, u64)> {
    shape().prop_flat_map(|(f, b)| (Just(f.clone()), Just(b.clone()), op_for(f, b), any::<u64>()))
}

fn eval(catalog: &Catalog, e: &TraExpr) -> TensorRelation {
    eval_expr(e, catalog, KernelRegistry::global()).unwrap()
}

/// Applies `op` to a random full relation and checks both constraints and
/// the tuple count its frontier implies.
pub fn check_closure(frontier: &[u64], bound: &[usize], op: &Op, seed: u64) -> Result<(), String> {
    let r = relation(frontier, bound, seed, 0);
    let mut catalog = Catalog::new();
    catalog.add_relation("R", r.clone(), PartitionSpec::None).unwrap();
    let src = TraExpr::source("R");
    let expr = match op {
        Op::Aggregate(g) => TraExpr::aggregate(g, Aggregator::op("matAdd"), src),
        Op::Join { keys, other } => {
            // The right side shares the first `keys` key dimensions, with its own extents.
            let right_front: Vec<u64> = frontier[..*keys].iter().copied().chain(other.iter().copied()).collect();
            catalog.add_relation("S", relation(&right_front, bound, seed, 1), PartitionSpec::None).unwrap();
            let on: Vec<usize> = (0..*keys).collect();
            TraExpr::join(&on, &on, Combine::op("elemMul"), src, TraExpr::source("S"))
        }
        Op::Transform(k) => TraExpr::transform(KernelCall::new(k), src),
        Op::Tile { dim, size } => TraExpr::tile(*dim, *size, src),
        Op::Concat { key_dim, array_dim } => TraExpr::concat(*key_dim, *array_dim, src),
    };
    let out = eval(&catalog, &expr);
    out.check_constraints().map_err(|v| format!("{op:?} broke {} at {:?}", v.kind, v.witness))?;
    let keys: Vec<Key> = out.tuples().iter().map(|(k, _)| k.clone()).collect();
    let n: u64 = frontier_of(out.key_arity(), keys.iter()).iter().product();
    if n as usize != out.len() {
        return Err(format!("{op:?}: frontier implies {n} tuples, found {}", out.len()));
    }
    let floats_in = r.len() * r.array_type().len();
    let kept = match op {
        Op::Tile { .. } | Op::Concat { .. } => out.len() * out.array_type().len() == floats_in,
        Op::Transform(_) => out.len() == r.len(),
        _ => true,
    };
    if kept { Ok(()) } else { Err(format!("{op:?} changed the amount of data")) }
}

pub fn tile_case() -> impl Strategy<Value = (Vec<u64>, Vec<usize>, prop::sample::Index, u64)> {
    (shape(), any::<prop::sample::Index>(), any::<u64>()).prop_map(|((f, b), i, s)| (f, b, i, s))
}

/// Tiles one array dimension and concatenates the new key dimension back.
pub fn check_concat_tile(frontier: &[u64], bound: &[usize], pick: prop::sample::Index, seed: u64) -> Result<(), String> {
    let dim = pick.index(bound.len());
    let divisors: Vec<usize> = (1..=bound[dim]).filter(|d| bound[dim].is_multiple_of(*d)).collect();
    let size = divisors[pick.index(divisors.len())];
    let r = relation(frontier, bound, seed, 0);
    let mut catalog = Catalog::new();
    catalog.add_relation("R", r.clone(), PartitionSpec::None).unwrap();
    let round = TraExpr::concat(frontier.len(), dim, TraExpr::tile(dim, size, TraExpr::source("R")));
    if eval(&catalog, &round).bit_eq(&r) {
        Ok(())
    } else {
        Err(format!("tile({dim},{size}) then concat changed {frontier:?} x {bound:?}"))
    }
}
