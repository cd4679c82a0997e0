//! Random TRA programs over two blocked matrices, shared by the oracle,
//! rule and metering suites.

#![allow(dead_code)]

pub mod corpus;
pub mod props;
pub mod suites;

use rand::seq::SliceRandom;
use rand::Rng;
use tra::ia::PartitionSpec;
use tra::keyexpr::{Expr, KeyFn, Pred};
use tra::model::blockify;
use tra::ops::{Aggregator, Combine, KernelCall};
use tra::rng;
use tra::tra::{Catalog, TraExpr};
use tra::{ArrayType, TensorRelation};

pub struct Case {
    pub expr: TraExpr,
    pub catalog: Catalog,
    /// Integer-valued data: results must match bit for bit.
    pub integer: bool,
    pub steps: Vec<&'static str>,
}

fn partition(g: &mut impl Rng) -> PartitionSpec {
    let specs = [
        PartitionSpec::None,
        PartitionSpec::All,
        PartitionSpec::Dims(vec![0]),
        PartitionSpec::Dims(vec![1]),
        PartitionSpec::Dims(vec![0, 1]),
        PartitionSpec::Dims(vec![1, 0]),
    ];
    specs.choose(g).unwrap().clone()
}

fn key_lt(dim: usize, c: i64) -> Pred {
    Pred::new(Expr::binary("lt", Expr::key(dim), Expr::c(c)).unwrap())
}

/// One step maps a key-arity-2 relation of square `b x b` blocks to another.
fn step(g: &mut impl Rng, e: TraExpr, b: usize, integer: bool) -> (&'static str, TraExpr) {
    let y = || TraExpr::source("Y");
    let add = || Aggregator::op("matAdd");
    match g.gen_range(0..9) {
        0 => {
            let op = if g.gen_bool(0.5) { "matAdd" } else { "elemMul" };
            ("join", TraExpr::join(&[0, 1], &[0, 1], Combine::op(op), e, y()))
        }
        1 => ("matmul", TraExpr::aggregate(&[0, 2], add(), TraExpr::join(&[1], &[0], Combine::op("matMul"), e, y()))),
        2 => {
            let d = g.gen_range(0..2);
            let sum = TraExpr::aggregate(&[d], add(), e);
            ("reduce", TraExpr::rekey(KeyFn::new(vec![Expr::key(0), Expr::c(0)]), sum))
        }
        3 => ("transpose", TraExpr::transform(KernelCall::new("transpose"), TraExpr::rekey(KeyFn::new(vec![Expr::key(1), Expr::key(0)]), e))),
        4 => ("filter", TraExpr::filter(key_lt(g.gen_range(0..2), g.gen_range(1..3)), e)),
        5 => {
            let mut calls = vec![KernelCall::new("relu"), KernelCall::with_args("scalarScale", vec![3.0])];
            if !integer {
                calls.push(KernelCall::new("sigmoid"));
            }
            ("transform", TraExpr::transform(calls.choose(g).unwrap().clone(), e))
        }
        6 if b.is_multiple_of(2) => {
            let d = g.gen_range(0..2);
            let tiled = TraExpr::transform(KernelCall::new("relu"), TraExpr::tile(d, b / 2, e));
            ("tile-concat", TraExpr::concat(2, d, tiled))
        }
        7 => {
            let d = g.gen_range(0..2);
            ("concat-tile", TraExpr::tile(d, b, TraExpr::concat(1 - d, d, e)))
        }
        _ => {
            let diag = TraExpr::filter(Pred::is_eq(), e);
            ("diagonal", TraExpr::rekey(KeyFn::new(vec![Expr::key(0), Expr::c(0)]), diag))
        }
    }
}

pub fn relation(seed: u64, stream: u64, integer: bool, frontier: (usize, usize), b: usize) -> TensorRelation {
    let ty = ArrayType::matrix(frontier.0 * b, frontier.1 * b).unwrap();
    let m = if integer { rng::integers(seed, stream, ty, 3) } else { rng::uniform(seed, stream, ty) };
    blockify(&m, b, b).unwrap()
}

pub fn random_case(seed: u64) -> Case {
    let mut g = rng::generator(seed, 99);
    let integer = g.gen_bool(0.5);
    let b = *[1usize, 2, 4].choose(&mut g).unwrap();
    let f = (g.gen_range(1..4), g.gen_range(1..4));
    let mut catalog = Catalog::new();
    catalog.add_relation("X", relation(seed, 0, integer, f, b), partition(&mut g)).unwrap();
    catalog.add_relation("Y", relation(seed, 1, integer, (f.1, f.1), b), partition(&mut g)).unwrap();
    let mut expr = TraExpr::source("X");
    let mut steps = Vec::new();
    for _ in 0..g.gen_range(1..4) {
        let (name, next) = step(&mut g, expr, b, integer);
        steps.push(name);
        expr = next;
    }
    Case { expr, catalog, integer, steps }
}

/// Same keys in the same order and arrays within `tol` (bit-equal when `tol` is 0).
pub fn same_relation(a: &TensorRelation, b: &TensorRelation, tol: f64) -> Result<(), String> {
    if a.key_arity() != b.key_arity() || a.array_type() != b.array_type() || a.len() != b.len() {
        return Err(format!(
            "shape differs: arity {} vs {}, type {:?} vs {:?}, {} vs {} tuples",
            a.key_arity(),
            b.key_arity(),
            a.array_type(),
            b.array_type(),
            a.len(),
            b.len()
        ));
    }
    for ((ka, va), (kb, vb)) in a.tuples().iter().zip(b.tuples()) {
        if ka != kb {
            return Err(format!("key {ka:?} vs {kb:?}"));
        }
        let ok = if tol == 0.0 { va.bit_eq(vb) } else { va.max_abs_diff(vb) <= tol };
        if !ok {
            return Err(format!("arrays differ at key {ka:?}: {:?} vs {:?}", va.values(), vb.values()));
        }
    }
    Ok(())
}
