//! The three benchmark workloads as plan generators, with shape presets for
//! symbolic costing, desk-scale data for execution and dense oracles.
//!
//! Block grids for the full-scale presets are our own choice: the contracted
//! dimension is split once per site and the other dimensions are split so
//! every site owns some blocks.

use crate::error::{Error, Result};
use crate::ia::PartitionSpec;
use crate::keyexpr::{KeyFn, Pred};
use crate::model::{blockify, ArrayType, DenseArray, TensorRelation};
use crate::ops::{Aggregator, ArrayMap, Combine, KernelCall, KeyMap};
use crate::plan::{self, IaPlan, NodeRef};
use crate::rng;
use crate::tra::{Catalog, TraExpr};

fn check_split(what: &str, len: usize, blocks: usize) -> Result<usize> {
    if len == 0 || blocks == 0 {
        return Err(Error::Shape(format!("{what}: sizes and block counts must be positive")));
    }
    if !len.is_multiple_of(blocks) {
        return Err(Error::Shape(format!("{what}: {len} is not divisible into {blocks} blocks")));
    }
    Ok(len / blocks)
}

fn matrix(rows: usize, cols: usize) -> Result<ArrayType> {
    ArrayType::matrix(rows, cols)
}

fn chain(calls: &[KernelCall]) -> ArrayMap {
    ArrayMap::Chain(calls.to_vec())
}

fn apply(arity: usize, call: KernelCall, x: NodeRef) -> NodeRef {
    plan::map(KeyMap::identity(arity), chain(&[call]), x)
}

fn with_post(op: &str, post: &str) -> Combine {
    Combine { post: vec![KernelCall::new(post)], ..Combine::op(op) }
}

fn dense_product(a: &DenseArray, b: &DenseArray, ta: bool, tb: bool) -> DenseArray {
    let (ar, ac) = (a.array_type().bound()[0], a.array_type().bound()[1]);
    let (br, bc) = (b.array_type().bound()[0], b.array_type().bound()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let at = |i: usize, p: usize| if ta { a.values()[p * ac + i] } else { a.values()[i * ac + p] };
    let bt = |p: usize, j: usize| if tb { b.values()[j * bc + p] } else { b.values()[p * bc + j] };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| at(i, p) * bt(p, j)).sum();
        }
    }
    DenseArray::new(ArrayType::matrix(m, n).unwrap(), out).unwrap()
}

/// Dense `A·B`, the matmul oracle.
pub fn dense_matmul(a: &DenseArray, b: &DenseArray) -> DenseArray {
    dense_product(a, b, false, false)
}

// Matrix multiplication.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatmulConfig {
    pub i: usize,
    pub k: usize,
    pub j: usize,
    pub nbi: usize,
    pub nbk: usize,
    pub nbj: usize,
}

impl MatmulConfig {
    /// Block sizes `(I/nbi, K/nbk, J/nbj)`.
    pub fn blocks(&self) -> Result<(usize, usize, usize)> {
        Ok((
            check_split("matmul I", self.i, self.nbi)?,
            check_split("matmul K", self.k, self.nbk)?,
            check_split("matmul J", self.j, self.nbj)?,
        ))
    }

    pub fn desk() -> Self {
        MatmulConfig { i: 64, k: 64, j: 64, nbi: 4, nbk: 4, nbj: 4 }
    }
}

/// Full-scale shapes with a 5x10x5 grid; costed at 10 sites.
pub fn table3_presets() -> Vec<(&'static str, MatmulConfig)> {
    let grid = |i, k, j| MatmulConfig { i, k, j, nbi: 5, nbk: 10, nbj: 5 };
    vec![
        ("general", grid(40_000, 40_000, 40_000)),
        ("common large dim", grid(10_000, 640_000, 10_000)),
        ("two large dims", grid(80_000, 10_000, 80_000)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatmulStrategy {
    Bmm,
    Cmm,
    Rmm,
}

impl MatmulStrategy {
    pub const ALL: [MatmulStrategy; 3] = [MatmulStrategy::Bmm, MatmulStrategy::Cmm, MatmulStrategy::Rmm];

    pub fn name(self) -> &'static str {
        match self {
            MatmulStrategy::Bmm => "BMM",
            MatmulStrategy::Cmm => "CMM",
            MatmulStrategy::Rmm => "RMM",
        }
    }

    /// Initial placement of `(X, Y)` each plan is costed under. BMM keeps the
    /// right input split by column so the aggregation needs no shuffle; CMM
    /// starts with both inputs split on the contracted dimension.
    pub fn layout(self) -> (PartitionSpec, PartitionSpec) {
        match self {
            MatmulStrategy::Bmm => (PartitionSpec::None, PartitionSpec::Dims(vec![1])),
            MatmulStrategy::Cmm => (PartitionSpec::Dims(vec![1]), PartitionSpec::Dims(vec![0])),
            MatmulStrategy::Rmm => (PartitionSpec::None, PartitionSpec::None),
        }
    }
}

/// `Σ(<0,2>, matAdd)(⋈(<1>,<0>, matMul)(X, Y))`.
pub fn matmul_expr() -> TraExpr {
    TraExpr::aggregate(
        &[0, 2],
        Aggregator::op("matAdd"),
        TraExpr::join(&[1], &[0], Combine::op("matMul"), TraExpr::source("X"), TraExpr::source("Y")),
    )
}

pub fn matmul_plan(strategy: MatmulStrategy, cfg: &MatmulConfig) -> IaPlan {
    let (x, y) = (plan::source("X"), plan::source("Y"));
    let add = || Aggregator::op("matAdd");
    let product = |a, b| plan::join(&[1], &[0], Combine::op("matMul"), a, b);
    IaPlan::new(match strategy {
        MatmulStrategy::Bmm => plan::agg(&[0, 2], add(), product(plan::bcast(x), y)),
        MatmulStrategy::Cmm => plan::agg(&[0, 2], add(), plan::shuf(&[0, 2], product(x, y))),
        MatmulStrategy::Rmm => {
            let xs = plan::shuf(
                &[0, 2],
                plan::map(KeyMap::InsertDim { dim: 2, count: cfg.nbj }, ArrayMap::Duplicate { count: cfg.nbj }, x),
            );
            let ys = plan::shuf(
                &[0, 2],
                plan::map(KeyMap::InsertDim { dim: 0, count: cfg.nbi }, ArrayMap::Duplicate { count: cfg.nbi }, y),
            );
            plan::agg(&[0, 2], add(), plan::join(&[0, 1, 2], &[0, 1, 2], Combine::op("matMul"), xs, ys))
        }
    })
}

pub fn matmul_shapes(cfg: &MatmulConfig, layout: (PartitionSpec, PartitionSpec)) -> Result<Catalog> {
    let (bi, bk, bj) = cfg.blocks()?;
    let mut c = Catalog::new();
    c.add_shape("X", matrix(bi, bk)?, vec![cfg.nbi as u64, cfg.nbk as u64], layout.0)?;
    c.add_shape("Y", matrix(bk, bj)?, vec![cfg.nbk as u64, cfg.nbj as u64], layout.1)?;
    Ok(c)
}

/// Random uniform(-1, 1) inputs; returns the catalog and the dense matrices.
pub fn matmul_data(
    cfg: &MatmulConfig,
    seed: u64,
    layout: (PartitionSpec, PartitionSpec),
) -> Result<(Catalog, DenseArray, DenseArray)> {
    let (bi, bk, bj) = cfg.blocks()?;
    let a = rng::uniform(seed, 0, matrix(cfg.i, cfg.k)?);
    let b = rng::uniform(seed, 1, matrix(cfg.k, cfg.j)?);
    let mut c = Catalog::new();
    c.add_relation("X", blockify(&a, bi, bk)?, layout.0)?;
    c.add_relation("Y", blockify(&b, bk, bj)?, layout.1)?;
    Ok((c, a, b))
}

// Nearest neighbour search under the metric (x - q) A (x - q)^T.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NnConfig {
    /// Candidates.
    pub n: usize,
    /// Feature dimension.
    pub d: usize,
    pub row_blocks: usize,
    pub col_blocks: usize,
}

impl NnConfig {
    pub fn blocks(&self) -> Result<(usize, usize)> {
        Ok((check_split("nn N", self.n, self.row_blocks)?, check_split("nn D", self.d, self.col_blocks)?))
    }

    /// Many rows, moderate feature dimension.
    pub fn many_rows(sites: usize) -> Self {
        NnConfig { n: 150_000, d: 6_000, row_blocks: sites, col_blocks: sites }
    }

    /// Few rows, large feature dimension.
    pub fn large_d(sites: usize) -> Self {
        NnConfig { n: 6_000, d: 100_000, row_blocks: sites, col_blocks: sites }
    }

    pub fn desk() -> Self {
        NnConfig { n: 64, d: 16, row_blocks: 4, col_blocks: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnVariant {
    Horizontal,
    Vertical,
}

impl NnVariant {
    pub const ALL: [NnVariant; 2] = [NnVariant::Horizontal, NnVariant::Vertical];

    pub fn name(self) -> &'static str {
        match self {
            NnVariant::Horizontal => "Opt4Horizontal",
            NnVariant::Vertical => "Opt4Vertical",
        }
    }

    /// Initial placement of `(Q, X, A)`.
    pub fn layout(self) -> [(&'static str, PartitionSpec); 3] {
        let dim = |d| PartitionSpec::Dims(vec![d]);
        match self {
            NnVariant::Horizontal => [("Q", dim(0)), ("X", dim(0)), ("A", dim(0))],
            NnVariant::Vertical => [("Q", dim(0)), ("X", dim(1)), ("A", dim(0))],
        }
    }
}

/// Plan computing `[min distance, row index]` under key `<>`.
///
/// Sources: `X` (candidates, keys `<row block, col block>`), `Q` (query,
/// keys `<col block>`, vector arrays) and `A` (metric, `<col block, col block>`).
pub fn nn_plan(variant: NnVariant) -> IaPlan {
    let (x, q, a) = (plan::source("X"), plan::source("Q"), plan::source("A"));
    let diff = plan::join(&[1], &[0], Combine::op("matVecSub"), x, plan::bcast(q));
    let product = plan::join(&[1], &[0], Combine::op("matMul"), diff.clone(), match variant {
        NnVariant::Horizontal => plan::bcast(a),
        NnVariant::Vertical => a,
    });
    let add = || Aggregator::op("matAdd");
    // Rows of `diff` stay put horizontally; vertically the partial products
    // are regrouped by output column so they line up with `diff` again.
    let proj = match variant {
        NnVariant::Horizontal => plan::agg(&[0, 2], add(), product),
        NnVariant::Vertical => plan::agg(&[0, 2], add(), plan::shuf(&[2], product)),
    };
    let weighted = plan::join(&[0, 1], &[0, 1], with_post("elemMul", "rowSum"), proj, diff);
    let dist = match variant {
        NnVariant::Horizontal => plan::agg(&[0], add(), weighted),
        NnVariant::Vertical => plan::agg(&[0], add(), plan::shuf(&[0], weighted)),
    };
    let local_min = plan::agg(&[], Aggregator::MinIndex { merge_states: false }, dist);
    IaPlan::new(plan::agg(&[], Aggregator::MinIndex { merge_states: true }, plan::shuf(&[], local_min)))
}

pub fn nn_shapes(cfg: &NnConfig, variant: NnVariant) -> Result<Catalog> {
    let (bn, bd) = cfg.blocks()?;
    let [q, x, a] = variant.layout();
    let (nb, db) = (cfg.row_blocks as u64, cfg.col_blocks as u64);
    let mut c = Catalog::new();
    c.add_shape(q.0, ArrayType::vector(bd)?, vec![db], q.1)?;
    c.add_shape(x.0, matrix(bn, bd)?, vec![nb, db], x.1)?;
    c.add_shape(a.0, matrix(bd, bd)?, vec![db, db], a.1)?;
    Ok(c)
}

/// Splits a vector into `<block>`-keyed rank-1 arrays.
pub fn vector_blocks(v: &[f64], block: usize) -> Result<TensorRelation> {
    check_split("vector", v.len(), v.len() / block.max(1))?;
    let ty = ArrayType::vector(block)?;
    let tuples = v
        .chunks(block)
        .enumerate()
        .map(|(i, c)| Ok((vec![i as u64], DenseArray::new(ty.clone(), c.to_vec())?)))
        .collect::<Result<Vec<_>>>()?;
    TensorRelation::from_tuples(1, ty, tuples)
}

#[derive(Debug, Clone)]
pub struct NnData {
    pub x: DenseArray,
    pub q: Vec<f64>,
    pub a: DenseArray,
}

/// Catalog over explicit data.
pub fn nn_catalog(cfg: &NnConfig, variant: NnVariant, data: &NnData) -> Result<Catalog> {
    let (bn, bd) = cfg.blocks()?;
    let [q, x, a] = variant.layout();
    let mut c = Catalog::new();
    c.add_relation(q.0, vector_blocks(&data.q, bd)?, q.1)?;
    c.add_relation(x.0, blockify(&data.x, bn, bd)?, x.1)?;
    c.add_relation(a.0, blockify(&data.a, bd, bd)?, a.1)?;
    Ok(c)
}

/// Random candidates and query; the metric is `M·Mᵀ` for a random `M`, so it
/// is symmetric positive semi-definite.
pub fn nn_data(cfg: &NnConfig, seed: u64) -> Result<NnData> {
    let x = rng::uniform(seed, 0, matrix(cfg.n, cfg.d)?);
    let q = rng::uniform(seed, 1, ArrayType::vector(cfg.d)?).into_values();
    let m = rng::uniform(seed, 2, matrix(cfg.d, cfg.d)?);
    Ok(NnData { x, q, a: dense_product(&m, &m, false, true) })
}

/// Brute-force scan: `(row, distance)` of the nearest candidate, first row on ties.
pub fn nn_oracle(data: &NnData) -> (usize, f64) {
    let d = data.q.len();
    let n = data.x.values().len() / d.max(1);
    let av = data.a.values();
    let mut best = (0usize, f64::INFINITY);
    for i in 0..n {
        let diff: Vec<f64> = (0..d).map(|c| data.x.values()[i * d + c] - data.q[c]).collect();
        let mut dist = 0.0;
        for r in 0..d {
            let row: f64 = (0..d).map(|c| diff[c] * av[c * d + r]).sum();
            dist += row * diff[r];
        }
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best
}

// One SGD step of a two-layer network:
//   a1 = relu(X·W1), a2 = sigmoid(a1·W2), e = a2 - Y,
//   ∇W2 = a1ᵀ·e, ∇W1 = Xᵀ·((e·W2ᵀ) ⊙ relu'(a1)), W -= η·∇W.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FfnnConfig {
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub l: usize,
    pub eta: f64,
    pub n_blocks: usize,
    pub d_blocks: usize,
    pub h_blocks: usize,
    pub l_blocks: usize,
}

impl FfnnConfig {
    pub fn blocks(&self) -> Result<(usize, usize, usize, usize)> {
        Ok((
            check_split("ffnn N", self.n, self.n_blocks)?,
            check_split("ffnn D", self.d, self.d_blocks)?,
            check_split("ffnn H", self.h, self.h_blocks)?,
            check_split("ffnn L", self.l, self.l_blocks)?,
        ))
    }

    /// Speech keyword task: `D=1600`, `L=10`, `N=1e4`.
    pub fn google(h: usize) -> Self {
        FfnnConfig { n: 10_000, d: 1_600, h, l: 10, eta: 0.1, n_blocks: 10, d_blocks: 1, h_blocks: 5, l_blocks: 10 }
    }

    /// Extreme multi-label task: `D=597540`, `L=14588`, `N=1e3`. Labels come in
    /// blocks of 4 (14588 = 4·3647) so the label blocks reach every site.
    pub fn amazon(h: usize) -> Self {
        FfnnConfig { n: 1_000, d: 597_540, h, l: 14_588, eta: 0.1, n_blocks: 5, d_blocks: 1, h_blocks: 5, l_blocks: 3_647 }
    }

    pub fn desk() -> Self {
        FfnnConfig { n: 32, d: 16, h: 8, l: 4, eta: 0.1, n_blocks: 4, d_blocks: 2, h_blocks: 4, l_blocks: 2 }
    }

    pub fn weight_floats(&self) -> u64 {
        (self.d * self.h + self.h * self.l) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfnnVariant {
    DataParallel,
    ModelParallel,
}

impl FfnnVariant {
    pub const ALL: [FfnnVariant; 2] = [FfnnVariant::DataParallel, FfnnVariant::ModelParallel];

    pub fn name(self) -> &'static str {
        match self {
            FfnnVariant::DataParallel => "TRA-DP",
            FfnnVariant::ModelParallel => "TRA-MP",
        }
    }

    /// Initial placement of `X, Y, W1, W2`. Data parallel splits the batch
    /// by rows and ships the weights. Model parallel replicates the batch and
    /// splits `W1` by hidden unit and `W2` by label.
    pub fn layout(self) -> [(&'static str, PartitionSpec); 4] {
        let dim = |d| PartitionSpec::Dims(vec![d]);
        match self {
            FfnnVariant::DataParallel => {
                [("X", dim(0)), ("Y", dim(0)), ("W1", PartitionSpec::None), ("W2", PartitionSpec::None)]
            }
            FfnnVariant::ModelParallel => {
                [("X", PartitionSpec::All), ("Y", PartitionSpec::All), ("W1", dim(1)), ("W2", dim(1))]
            }
        }
    }
}

/// Two-phase sum over `group_by`: per-site partial sums, a shuffle on
/// `regroup` (positions in the grouped key), then the final sum.
fn two_phase_sum(group_by: &[usize], regroup: &[usize], x: NodeRef) -> NodeRef {
    let add = || Aggregator::op("matAdd");
    let all: Vec<usize> = (0..group_by.len()).collect();
    plan::agg(&all, add(), plan::shuf(regroup, plan::agg(group_by, add(), x)))
}

/// One SGD step; roots are the updated `W1` and `W2`.
pub fn ffnn_plan(variant: FfnnVariant, eta: f64) -> IaPlan {
    let (x, y, w1, w2) = (plan::source("X"), plan::source("Y"), plan::source("W1"), plan::source("W2"));
    let add = || Aggregator::op("matAdd");
    let mm = |op: &str, keys_l: &[usize], keys_r: &[usize], l: NodeRef, r: NodeRef| {
        plan::join(keys_l, keys_r, Combine::op(op), l, r)
    };
    let step = |w: NodeRef, grad: NodeRef| {
        let scaled = apply(2, KernelCall::with_args("scalarScale", vec![eta]), grad);
        plan::join(&[0, 1], &[0, 1], Combine::op("matSub"), w, scaled)
    };
    let root = match variant {
        FfnnVariant::DataParallel => {
            let (w1b, w2b) = (plan::bcast(w1), plan::bcast(w2));
            let a1 = apply(2, KernelCall::new("relu"), plan::agg(&[0, 2], add(), mm("matMul", &[1], &[0], x.clone(), w1b.clone())));
            let a2 = plan::agg(&[0, 2], Aggregator::Binary(with_post("matAdd", "sigmoid")), mm("matMul", &[1], &[0], a1.clone(), w2b.clone()));
            let e = mm("matSub", &[0, 1], &[0, 1], a2, y);
            let grad_w2 = two_phase_sum(&[1, 2], &[0, 1], mm("matMulTN", &[0], &[0], a1.clone(), e.clone()));
            let back = plan::agg(&[0, 2], add(), mm("matMulNT", &[1], &[1], e, w2b.clone()));
            let delta = mm("reluGrad", &[0, 1], &[0, 1], a1, back);
            let grad_w1 = two_phase_sum(&[1, 2], &[0, 1], mm("matMulTN", &[0], &[0], x, delta));
            vec![step(w1b, grad_w1), step(w2b, grad_w2)]
        }
        FfnnVariant::ModelParallel => {
            let a1 = apply(2, KernelCall::new("relu"), plan::agg(&[0, 2], add(), mm("matMul", &[1], &[0], x.clone(), w1.clone())));
            let a1b = plan::bcast(a1.clone());
            let a2 = plan::agg(&[0, 2], Aggregator::Binary(with_post("matAdd", "sigmoid")), mm("matMul", &[1], &[0], a1b.clone(), w2.clone()));
            let e = mm("matSub", &[0, 1], &[0, 1], a2, y);
            let grad_w2 = plan::agg(&[1, 2], add(), mm("matMulTN", &[0], &[0], a1b, e.clone()));
            // Contraction over labels: partial sums per site, regrouped by hidden block.
            let back = two_phase_sum(&[0, 2], &[1], mm("matMulNT", &[1], &[1], e, w2.clone()));
            let delta = mm("reluGrad", &[0, 1], &[0, 1], a1, back);
            let grad_w1 = plan::agg(&[1, 2], add(), mm("matMulTN", &[0], &[0], x, delta));
            vec![step(w1, grad_w1), step(w2, grad_w2)]
        }
    };
    IaPlan::with_roots(root)
}

pub fn ffnn_shapes(cfg: &FfnnConfig, variant: FfnnVariant) -> Result<Catalog> {
    let (bn, bd, bh, bl) = cfg.blocks()?;
    let (nn, nd, nh, nl) = (cfg.n_blocks as u64, cfg.d_blocks as u64, cfg.h_blocks as u64, cfg.l_blocks as u64);
    let [x, y, w1, w2] = variant.layout();
    let mut c = Catalog::new();
    c.add_shape(x.0, matrix(bn, bd)?, vec![nn, nd], x.1)?;
    c.add_shape(y.0, matrix(bn, bl)?, vec![nn, nl], y.1)?;
    c.add_shape(w1.0, matrix(bd, bh)?, vec![nd, nh], w1.1)?;
    c.add_shape(w2.0, matrix(bh, bl)?, vec![nh, nl], w2.1)?;
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct FfnnData {
    pub x: DenseArray,
    pub y: DenseArray,
    pub w1: DenseArray,
    pub w2: DenseArray,
}

/// Uniform(-1, 1) inputs and weights; labels are 0/1.
pub fn ffnn_data(cfg: &FfnnConfig, seed: u64) -> Result<FfnnData> {
    let labels = rng::uniform(seed, 1, matrix(cfg.n, cfg.l)?);
    let y = DenseArray::new(labels.array_type().clone(), labels.values().iter().map(|v| f64::from(*v > 0.0)).collect())?;
    Ok(FfnnData {
        x: rng::uniform(seed, 0, matrix(cfg.n, cfg.d)?),
        y,
        w1: rng::uniform(seed, 2, matrix(cfg.d, cfg.h)?),
        w2: rng::uniform(seed, 3, matrix(cfg.h, cfg.l)?),
    })
}

pub fn ffnn_catalog(cfg: &FfnnConfig, variant: FfnnVariant, data: &FfnnData) -> Result<Catalog> {
    let (bn, bd, bh, bl) = cfg.blocks()?;
    let [x, y, w1, w2] = variant.layout();
    let mut c = Catalog::new();
    c.add_relation(x.0, blockify(&data.x, bn, bd)?, x.1)?;
    c.add_relation(y.0, blockify(&data.y, bn, bl)?, y.1)?;
    c.add_relation(w1.0, blockify(&data.w1, bd, bh)?, w1.1)?;
    c.add_relation(w2.0, blockify(&data.w2, bh, bl)?, w2.1)?;
    Ok(c)
}

/// Dense single-site SGD step, returning the updated `(W1, W2)`.
pub fn ffnn_oracle(data: &FfnnData, eta: f64) -> (DenseArray, DenseArray) {
    let map = |a: &DenseArray, f: &dyn Fn(f64) -> f64| {
        DenseArray::new(a.array_type().clone(), a.values().iter().map(|v| f(*v)).collect()).unwrap()
    };
    let zip = |a: &DenseArray, b: &DenseArray, f: &dyn Fn(f64, f64) -> f64| {
        DenseArray::new(a.array_type().clone(), a.values().iter().zip(b.values()).map(|(x, y)| f(*x, *y)).collect())
            .unwrap()
    };
    let a1 = map(&dense_product(&data.x, &data.w1, false, false), &|v| v.max(0.0));
    let a2 = map(&dense_product(&a1, &data.w2, false, false), &|v| 1.0 / (1.0 + (-v).exp()));
    let e = zip(&a2, &data.y, &|a, b| a - b);
    let grad_w2 = dense_product(&a1, &e, true, false);
    let back = dense_product(&e, &data.w2, false, true);
    let delta = zip(&a1, &back, &|a, g| if a > 0.0 { g } else { 0.0 });
    let grad_w1 = dense_product(&data.x, &delta, true, false);
    let step = |w: &DenseArray, g: &DenseArray| zip(w, g, &|w, g| w - eta * g);
    (step(&data.w1, &grad_w1), step(&data.w2, &grad_w2))
}

// diag(X + Y) on square blocked matrices.

/// `λ(diag)(ReKey(<k0>)(σ(k0 = k1)(⋈(<0,1>,<0,1>, matAdd)(X, Y))))`.
pub fn diag_expr() -> TraExpr {
    TraExpr::transform(
        KernelCall::new("diag"),
        TraExpr::rekey(
            KeyFn::project(&[0]),
            TraExpr::filter(
                Pred::is_eq(),
                TraExpr::join(&[0, 1], &[0, 1], Combine::op("matAdd"), TraExpr::source("X"), TraExpr::source("Y")),
            ),
        ),
    )
}

/// Two `n x n` matrices in `block x block` tiles with small integer entries.
pub fn diag_data(n: usize, block: usize, seed: u64) -> Result<(Catalog, DenseArray, DenseArray)> {
    check_split("diag", n, n / block.max(1))?;
    let x = rng::integers(seed, 0, matrix(n, n)?, 9);
    let y = rng::integers(seed, 1, matrix(n, n)?, 9);
    let mut c = Catalog::new();
    c.add_relation("X", blockify(&x, block, block)?, PartitionSpec::None)?;
    c.add_relation("Y", blockify(&y, block, block)?, PartitionSpec::None)?;
    Ok((c, x, y))
}

/// The diagonal of `X + Y` in `block`-sized pieces keyed `<i>`.
pub fn diag_oracle(x: &DenseArray, y: &DenseArray, block: usize) -> Result<TensorRelation> {
    let n = x.array_type().bound()[0];
    let d: Vec<f64> = (0..n).map(|i| x.values()[i * n + i] + y.values()[i * n + i]).collect();
    vector_blocks(&d, block)
}

/// Name of a workload for the command line.
pub fn named_matmul(name: &str) -> Option<MatmulConfig> {
    table3_presets().into_iter().find(|(n, _)| n.replace(' ', "-") == name).map(|(_, c)| c)
}
