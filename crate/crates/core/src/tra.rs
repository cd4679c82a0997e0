//! Logical tensor relational algebra: expression trees, the source catalog
//! and the single-site reference evaluator.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::ia::PartitionSpec;
use crate::kernels::KernelRegistry;
use crate::keyexpr::{KeyFn, Pred};
use crate::model::{ArrayType, DenseArray, Key, KeyGrid, TensorRelation};
use crate::ops::{apply_chain, dims_field, field, usize_field, Aggregator, Combine, KernelCall, Payload};

#[derive(Debug, Clone, PartialEq)]
pub enum TraExpr {
    Source(String),
    Aggregate { group_by: Vec<usize>, agg: Aggregator, input: Box<TraExpr> },
    Join { keys_l: Vec<usize>, keys_r: Vec<usize>, proj: Combine, left: Box<TraExpr>, right: Box<TraExpr> },
    ReKey { f: KeyFn, input: Box<TraExpr> },
    Filter { pred: Pred, input: Box<TraExpr> },
    Transform { kernel: KernelCall, input: Box<TraExpr> },
    Tile { dim: usize, size: usize, input: Box<TraExpr> },
    Concat { key_dim: usize, array_dim: usize, input: Box<TraExpr> },
}

impl TraExpr {
    pub fn source(name: &str) -> Self {
        TraExpr::Source(name.to_string())
    }

    pub fn aggregate(group_by: &[usize], agg: Aggregator, input: TraExpr) -> Self {
        TraExpr::Aggregate { group_by: group_by.to_vec(), agg, input: Box::new(input) }
    }

    pub fn join(keys_l: &[usize], keys_r: &[usize], proj: Combine, left: TraExpr, right: TraExpr) -> Self {
        TraExpr::Join {
            keys_l: keys_l.to_vec(),
            keys_r: keys_r.to_vec(),
            proj,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn rekey(f: KeyFn, input: TraExpr) -> Self {
        TraExpr::ReKey { f, input: Box::new(input) }
    }

    pub fn filter(pred: Pred, input: TraExpr) -> Self {
        TraExpr::Filter { pred, input: Box::new(input) }
    }

    pub fn transform(kernel: KernelCall, input: TraExpr) -> Self {
        TraExpr::Transform { kernel, input: Box::new(input) }
    }

    pub fn tile(dim: usize, size: usize, input: TraExpr) -> Self {
        TraExpr::Tile { dim, size, input: Box::new(input) }
    }

    pub fn concat(key_dim: usize, array_dim: usize, input: TraExpr) -> Self {
        TraExpr::Concat { key_dim, array_dim, input: Box::new(input) }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TraExpr::Source(_) => "source",
            TraExpr::Aggregate { .. } => "aggregate",
            TraExpr::Join { .. } => "join",
            TraExpr::ReKey { .. } => "rekey",
            TraExpr::Filter { .. } => "filter",
            TraExpr::Transform { .. } => "transform",
            TraExpr::Tile { .. } => "tile",
            TraExpr::Concat { .. } => "concat",
        }
    }

    pub fn children(&self) -> Vec<&TraExpr> {
        match self {
            TraExpr::Source(_) => vec![],
            TraExpr::Join { left, right, .. } => vec![left, right],
            TraExpr::Aggregate { input, .. }
            | TraExpr::ReKey { input, .. }
            | TraExpr::Filter { input, .. }
            | TraExpr::Transform { input, .. }
            | TraExpr::Tile { input, .. }
            | TraExpr::Concat { input, .. } => vec![input],
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = match self {
            TraExpr::Source(name) => json!({"name": name}),
            TraExpr::Aggregate { group_by, agg, input } => {
                json!({"groupBy": group_by, "agg": agg.to_json(), "input": input.to_json()})
            }
            TraExpr::Join { keys_l, keys_r, proj, left, right } => json!({
                "joinKeysL": keys_l, "joinKeysR": keys_r, "proj": proj.to_json(),
                "left": left.to_json(), "right": right.to_json()
            }),
            TraExpr::ReKey { f, input } => json!({"keyFunc": f.to_json(), "input": input.to_json()}),
            TraExpr::Filter { pred, input } => json!({"boolFunc": pred.to_json(), "input": input.to_json()}),
            TraExpr::Transform { kernel, input } => json!({"kernel": kernel.to_json(), "input": input.to_json()}),
            TraExpr::Tile { dim, size, input } => json!({"tileDim": dim, "tileSize": size, "input": input.to_json()}),
            TraExpr::Concat { key_dim, array_dim, input } => {
                json!({"keyDim": key_dim, "arrayDim": array_dim, "input": input.to_json()})
            }
        };
        v["op"] = json!(self.kind());
        v
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let input = || -> Result<Box<TraExpr>> { Ok(Box::new(TraExpr::from_json(field(v, "input")?)?)) };
        let op = v.get("op").and_then(Value::as_str).ok_or_else(|| Error::Format(format!("expression without op: {v}")))?;
        Ok(match op {
            "source" => TraExpr::Source(
                field(v, "name")?.as_str().ok_or_else(|| Error::Format("source name must be a string".into()))?.to_string(),
            ),
            "aggregate" => TraExpr::Aggregate {
                group_by: dims_field(v, "groupBy")?,
                agg: Aggregator::from_json(field(v, "agg")?)?,
                input: input()?,
            },
            "join" => TraExpr::Join {
                keys_l: dims_field(v, "joinKeysL")?,
                keys_r: dims_field(v, "joinKeysR")?,
                proj: Combine::from_json(field(v, "proj")?)?,
                left: Box::new(TraExpr::from_json(field(v, "left")?)?),
                right: Box::new(TraExpr::from_json(field(v, "right")?)?),
            },
            "rekey" => TraExpr::ReKey { f: KeyFn::from_json(field(v, "keyFunc")?)?, input: input()? },
            "filter" => TraExpr::Filter { pred: Pred::from_json(field(v, "boolFunc")?)?, input: input()? },
            "transform" => TraExpr::Transform { kernel: KernelCall::from_json(field(v, "kernel")?)?, input: input()? },
            "tile" => TraExpr::Tile { dim: usize_field(v, "tileDim")?, size: usize_field(v, "tileSize")?, input: input()? },
            "concat" => TraExpr::Concat {
                key_dim: usize_field(v, "keyDim")?,
                array_dim: usize_field(v, "arrayDim")?,
                input: input()?,
            },
            other => return Err(Error::Format(format!("unknown expression op `{other}`"))),
        })
    }
}

impl std::fmt::Display for TraExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let dims = |d: &[usize]| format!("<{}>", d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        match self {
            TraExpr::Source(n) => write!(f, "{n}"),
            TraExpr::Aggregate { group_by, agg, input } => write!(f, "Agg({},{agg})({input})", dims(group_by)),
            TraExpr::Join { keys_l, keys_r, proj, left, right } => {
                write!(f, "Join({},{},{proj})({left}, {right})", dims(keys_l), dims(keys_r))
            }
            TraExpr::ReKey { f: k, input } => write!(f, "ReKey({k})({input})"),
            TraExpr::Filter { pred, input } => write!(f, "Filter({pred})({input})"),
            TraExpr::Transform { kernel, input } => write!(f, "Transform({kernel})({input})"),
            TraExpr::Tile { dim, size, input } => write!(f, "Tile({dim},{size})({input})"),
            TraExpr::Concat { key_dim, array_dim, input } => write!(f, "Concat({key_dim},{array_dim})({input})"),
        }
    }
}

/// A named source: its shape, declared initial placement and optionally data.
#[derive(Debug, Clone)]
pub struct SourceInfo {
    pub key_arity: usize,
    pub array_type: ArrayType,
    pub frontier: Key,
    pub partition: PartitionSpec,
    pub data: Option<Arc<TensorRelation>>,
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    sources: BTreeMap<String, SourceInfo>,
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    /// Adds a source with data. The relation must satisfy both constraints.
    pub fn add_relation(&mut self, name: &str, rel: TensorRelation, partition: PartitionSpec) -> Result<()> {
        rel.check_constraints()?;
        partition.validate(rel.key_arity())?;
        let info = SourceInfo {
            key_arity: rel.key_arity(),
            array_type: rel.array_type().clone(),
            frontier: rel.frontier(),
            partition,
            data: Some(Arc::new(rel)),
        };
        self.insert(name, info)
    }

    /// Adds a shape-only source covering the full key grid below `frontier`.
    pub fn add_shape(&mut self, name: &str, array_type: ArrayType, frontier: Key, partition: PartitionSpec) -> Result<()> {
        partition.validate(frontier.len())?;
        let info = SourceInfo { key_arity: frontier.len(), array_type, frontier, partition, data: None };
        self.insert(name, info)
    }

    fn insert(&mut self, name: &str, info: SourceInfo) -> Result<()> {
        if self.sources.contains_key(name) {
            return Err(Error::validation(format!("source {name}"), "duplicate source name"));
        }
        self.sources.insert(name.to_string(), info);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&SourceInfo> {
        self.sources.get(name).ok_or_else(|| Error::UnknownSource(name.to_string()))
    }

    pub fn set_partition(&mut self, name: &str, partition: PartitionSpec) -> Result<()> {
        let info = self.sources.get_mut(name).ok_or_else(|| Error::UnknownSource(name.to_string()))?;
        partition.validate(info.key_arity)?;
        info.partition = partition;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sources.keys().map(String::as_str)
    }

    pub fn relation(&self, name: &str) -> Result<&TensorRelation> {
        self.get(name)?
            .data
            .as_deref()
            .ok_or_else(|| Error::validation(format!("source {name}"), "source has no data (shape-only catalog)"))
    }

    /// Source tuples as payloads: real arrays when present, otherwise types.
    pub fn symbolic_tuples(&self, name: &str) -> Result<Vec<(Key, ArrayType)>> {
        let info = self.get(name)?;
        Ok(match &info.data {
            Some(rel) => rel.tuples().iter().map(|(k, a)| (k.clone(), a.array_type().clone())).collect(),
            None => KeyGrid::new(&info.frontier).map(|k| (k, info.array_type.clone())).collect(),
        })
    }
}

/// A logical relation over any payload, used by the reference evaluator.
#[derive(Debug, Clone)]
pub struct LogicalRel<P> {
    pub key_arity: usize,
    pub array_type: ArrayType,
    pub tuples: Vec<(Key, P)>,
}

impl<P: Payload> LogicalRel<P> {
    fn sorted(key_arity: usize, array_type: ArrayType, mut tuples: Vec<(Key, P)>) -> Self {
        tuples.sort_by(|a, b| a.0.cmp(&b.0));
        LogicalRel { key_arity, array_type, tuples }
    }

    pub fn frontier(&self) -> Key {
        crate::model::frontier_of(self.key_arity, self.tuples.iter().map(|(k, _)| k))
    }
}

fn check_dims(path: &str, dims: &[usize], arity: usize) -> Result<()> {
    for (i, d) in dims.iter().enumerate() {
        if *d >= arity {
            return Err(Error::validation(path, format!("dimension {d} out of range for key arity {arity}")));
        }
        if dims[..i].contains(d) {
            return Err(Error::validation(path, format!("dimension {d} listed twice")));
        }
    }
    Ok(())
}

/// Output key of a join: full left key, then the right key without its join positions.
pub fn join_key(left: &[u64], right: &[u64], keys_r: &[usize]) -> Key {
    let mut k = left.to_vec();
    k.extend(right.iter().enumerate().filter(|(i, _)| !keys_r.contains(i)).map(|(_, v)| *v));
    k
}

pub fn project(key: &[u64], dims: &[usize]) -> Key {
    dims.iter().map(|&d| key[d]).collect()
}

pub fn check_join_keys(path: &str, keys_l: &[usize], keys_r: &[usize], arity_l: usize, arity_r: usize) -> Result<()> {
    if keys_l.len() != keys_r.len() {
        return Err(Error::validation(path, "joinKeysL and joinKeysR differ in length"));
    }
    check_dims(path, keys_l, arity_l)?;
    check_dims(path, keys_r, arity_r)
}

pub(crate) fn check_group_by(path: &str, group_by: &[usize], arity: usize) -> Result<()> {
    check_dims(path, group_by, arity)
}

/// Evaluates an expression bottom-up over any payload. `leaf` supplies sources.
pub fn eval_generic<P: Payload>(
    expr: &TraExpr,
    reg: &KernelRegistry,
    leaf: &dyn Fn(&str) -> Result<LogicalRel<P>>,
) -> Result<LogicalRel<P>> {
    let path = expr.kind();
    match expr {
        TraExpr::Source(name) => leaf(name),
        TraExpr::Aggregate { group_by, agg, input } => {
            let r = eval_generic(input, reg, leaf)?;
            check_group_by(path, group_by, r.key_arity)?;
            agg.validate(reg, r.key_arity, group_by)?;
            let ty = agg.out_type(reg, &r.array_type)?;
            let mut groups: BTreeMap<Key, Vec<(&Key, &P)>> = BTreeMap::new();
            for (k, a) in &r.tuples {
                groups.entry(project(k, group_by)).or_default().push((k, a));
            }
            let tuples = groups
                .into_iter()
                .map(|(g, items)| Ok((g, agg.reduce(reg, &items)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(LogicalRel::sorted(group_by.len(), ty, tuples))
        }
        TraExpr::Join { keys_l, keys_r, proj, left, right } => {
            let l = eval_generic(left, reg, leaf)?;
            let r = eval_generic(right, reg, leaf)?;
            check_join_keys(path, keys_l, keys_r, l.key_arity, r.key_arity)?;
            let ty = proj.apply(reg, &l.array_type, &r.array_type)?;
            let mut index: HashMap<Key, Vec<usize>> = HashMap::new();
            for (i, (k, _)) in r.tuples.iter().enumerate() {
                index.entry(project(k, keys_r)).or_default().push(i);
            }
            let mut out = Vec::new();
            for (kl, al) in &l.tuples {
                if let Some(matches) = index.get(&project(kl, keys_l)) {
                    for &i in matches {
                        let (kr, ar) = &r.tuples[i];
                        out.push((join_key(kl, kr, keys_r), proj.apply(reg, al, ar)?));
                    }
                }
            }
            Ok(LogicalRel::sorted(l.key_arity + r.key_arity - keys_l.len(), ty, out))
        }
        TraExpr::ReKey { f, input } => {
            let r = eval_generic(input, reg, leaf)?;
            if f.input_arity_needed() > r.key_arity {
                return Err(Error::validation(path, format!("key function {f} reads past key arity {}", r.key_arity)));
            }
            let tuples = r.tuples.into_iter().map(|(k, a)| Ok((f.apply(&k)?, a))).collect::<Result<Vec<_>>>()?;
            Ok(LogicalRel::sorted(f.arity(), r.array_type, tuples))
        }
        TraExpr::Filter { pred, input } => {
            let r = eval_generic(input, reg, leaf)?;
            if pred.keys_used().iter().any(|&d| d >= r.key_arity) {
                return Err(Error::validation(path, format!("predicate {pred} reads past key arity {}", r.key_arity)));
            }
            let tuples = r.tuples.into_iter().filter(|(k, _)| pred.test(k)).collect();
            Ok(LogicalRel { key_arity: r.key_arity, array_type: r.array_type, tuples })
        }
        TraExpr::Transform { kernel, input } => {
            let r = eval_generic(input, reg, leaf)?;
            let calls = std::slice::from_ref(kernel);
            let ty = apply_chain(reg, calls, &r.array_type)?;
            let tuples =
                r.tuples.into_iter().map(|(k, a)| Ok((k, apply_chain(reg, calls, &a)?))).collect::<Result<Vec<_>>>()?;
            Ok(LogicalRel { key_arity: r.key_arity, array_type: ty, tuples })
        }
        TraExpr::Tile { dim, size, input } => {
            let r = eval_generic(input, reg, leaf)?;
            let ty = r.array_type.tile_part(*dim, *size, 0)?;
            let n = r.array_type.bound()[*dim] / size;
            let mut out = Vec::with_capacity(r.tuples.len() * n);
            for (k, a) in &r.tuples {
                for i in 0..n {
                    let mut nk = k.clone();
                    nk.push(i as u64);
                    out.push((nk, a.tile_part(*dim, *size, i)?));
                }
            }
            Ok(LogicalRel::sorted(r.key_arity + 1, ty, out))
        }
        TraExpr::Concat { key_dim, array_dim, input } => {
            let r = eval_generic(input, reg, leaf)?;
            if *key_dim >= r.key_arity {
                return Err(Error::validation(path, format!("key dimension {key_dim} out of range")));
            }
            crate::model::check_keys(r.key_arity, r.tuples.iter().map(|(k, _)| k))?;
            let count = r.frontier()[*key_dim] as usize;
            let rest: Vec<usize> = (0..r.key_arity).filter(|d| d != key_dim).collect();
            let agg = Aggregator::Concat { key_dim: *key_dim, array_dim: *array_dim, count };
            let ty = agg.out_type(reg, &r.array_type)?;
            let mut groups: BTreeMap<Key, Vec<(&Key, &P)>> = BTreeMap::new();
            for (k, a) in &r.tuples {
                groups.entry(project(k, &rest)).or_default().push((k, a));
            }
            let tuples = groups
                .into_iter()
                .map(|(g, items)| Ok((g, agg.reduce(reg, &items)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(LogicalRel::sorted(rest.len(), ty, tuples))
        }
    }
}

/// The single-site oracle.
pub fn eval_expr(expr: &TraExpr, catalog: &Catalog, reg: &KernelRegistry) -> Result<TensorRelation> {
    let leaf = |name: &str| -> Result<LogicalRel<DenseArray>> {
        let rel = catalog.relation(name)?;
        Ok(LogicalRel {
            key_arity: rel.key_arity(),
            array_type: rel.array_type().clone(),
            tuples: rel.tuples().to_vec(),
        })
    };
    let out = eval_generic(expr, reg, &leaf)?;
    TensorRelation::from_tuples(out.key_arity, out.array_type, out.tuples)
}

/// Shape-level evaluation: key sets and array types only.
pub fn eval_symbolic(expr: &TraExpr, catalog: &Catalog, reg: &KernelRegistry) -> Result<LogicalRel<ArrayType>> {
    let leaf = |name: &str| -> Result<LogicalRel<ArrayType>> {
        let info = catalog.get(name)?;
        Ok(LogicalRel {
            key_arity: info.key_arity,
            array_type: info.array_type.clone(),
            tuples: catalog.symbolic_tuples(name)?,
        })
    };
    eval_generic(expr, reg, &leaf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyexpr::Expr;
    use crate::model::blockify;

    fn matrix_a() -> DenseArray {
        DenseArray::from_rows(&[
            vec![1., 2., 5., 6.],
            vec![3., 4., 7., 8.],
            vec![9., 10., 13., 14.],
            vec![11., 12., 15., 16.],
        ])
        .unwrap()
    }

    fn matrix_b() -> DenseArray {
        DenseArray::from_rows(&[vec![1., 2., 5., 6., 9., 10., 13., 14.], vec![3., 4., 7., 8., 11., 12., 15., 16.]])
            .unwrap()
    }

    /// B split into two column blocks keyed by block column alone.
    fn r_b() -> TensorRelation {
        let blocks = blockify(&matrix_b(), 2, 4).unwrap();
        let ty = blocks.array_type().clone();
        TensorRelation::from_tuples(1, ty, blocks.into_tuples().into_iter().map(|(k, a)| (vec![k[1]], a)).collect())
            .unwrap()
    }

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        c.add_relation("A", blockify(&matrix_a(), 2, 2).unwrap(), PartitionSpec::None).unwrap();
        c.add_relation("B", r_b(), PartitionSpec::None).unwrap();
        c
    }

    fn eval(e: &TraExpr) -> TensorRelation {
        eval_expr(e, &catalog(), KernelRegistry::global()).unwrap()
    }

    fn rows(r: &[&[f64]]) -> DenseArray {
        DenseArray::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let a = TraExpr::source("A");
        let by1 = eval(&TraExpr::aggregate(&[1], Aggregator::op("matAdd"), a.clone()));
        assert_eq!(by1.len(), 2);
        assert_eq!(by1.get(&[0]).unwrap(), &rows(&[&[10., 12.], &[14., 16.]]));
        assert_eq!(by1.get(&[1]).unwrap(), &rows(&[&[18., 20.], &[22., 24.]]));
        let all = eval(&TraExpr::aggregate(&[], Aggregator::op("matAdd"), a.clone()));
        assert_eq!(all.get(&[]).unwrap(), &rows(&[&[28., 32.], &[36., 40.]]));
        let id = eval(&TraExpr::aggregate(&[0, 1], Aggregator::op("matAdd"), a));
        assert!(id.bit_eq(&blockify(&matrix_a(), 2, 2).unwrap()));
    }

    #[test]
    fn non_associative_aggregation_is_rejected() {
        let e = TraExpr::aggregate(&[0], Aggregator::op("matSub"), TraExpr::source("A"));
        assert!(matches!(eval_expr(&e, &catalog(), KernelRegistry::global()), Err(Error::Validation { .. })));
    }

    #[test]
    fn join_example_and_matmul() {
        let j = TraExpr::join(&[1], &[0], Combine::op("matMul"), TraExpr::source("A"), TraExpr::source("A"));
        let r = eval(&j);
        assert_eq!(r.key_arity(), 3);
        assert_eq!(r.len(), 8);
        assert_eq!(r.get(&[0, 1, 0]).unwrap(), &rows(&[&[111., 122.], &[151., 166.]]));
        let mm = eval(&TraExpr::aggregate(&[0, 2], Aggregator::op("matAdd"), j));
        let dense = KernelRegistry::global().apply_binary("matMul", &[], &matrix_a(), &matrix_a()).unwrap();
        assert!(mm.bit_eq(&blockify(&dense, 2, 2).unwrap()));
        let cross = eval(&TraExpr::join(&[], &[], Combine::op("matAdd"), TraExpr::source("A"), TraExpr::source("A")));
        assert_eq!(cross.key_arity(), 4);
        assert_eq!(cross.len(), 16);
    }

    #[test]
    fn tile_rekey_concat_examples() {
        let t = eval(&TraExpr::tile(1, 2, TraExpr::source("B")));
        assert_eq!(t.key_arity(), 2);
        assert_eq!(t.len(), 4);
        assert_eq!(t.get(&[0, 1]).unwrap(), &rows(&[&[5., 6.], &[7., 8.]]));
        assert_eq!(t.get(&[1, 0]).unwrap(), &rows(&[&[9., 10.], &[11., 12.]]));
        let flat = KeyFn::new(vec![Expr::binary("add", Expr::binary("mul", Expr::c(2), Expr::key(0)).unwrap(), Expr::key(1)).unwrap()]);
        let four = eval(&TraExpr::rekey(flat, TraExpr::tile(1, 2, TraExpr::source("B"))));
        assert_eq!(four.frontier(), vec![4]);
        assert!(four.check_constraints().is_ok());
        assert_eq!(four.get(&[3]).unwrap(), &rows(&[&[13., 14.], &[15., 16.]]));
        let back = eval(&TraExpr::concat(1, 1, TraExpr::tile(1, 2, TraExpr::source("B"))));
        assert!(back.bit_eq(&r_b()));
        let whole = eval(&TraExpr::tile(1, 4, TraExpr::source("B")));
        assert!(whole.tuples().iter().all(|(k, _)| k[1] == 0));
        let rows_a = eval(&TraExpr::tile(0, 1, TraExpr::source("A")));
        assert_eq!(rows_a.key_arity(), 3);
        assert_eq!(rows_a.array_type().bound(), &[1, 2]);
        assert_eq!(rows_a.len(), 8);
        let round = eval(&TraExpr::concat(2, 0, TraExpr::tile(0, 1, TraExpr::source("A"))));
        assert!(round.bit_eq(&blockify(&matrix_a(), 2, 2).unwrap()));
    }

    #[test]
    fn diagonal_pipeline() {
        let e = TraExpr::transform(
            KernelCall::new("diag"),
            TraExpr::rekey(KeyFn::project(&[0]), TraExpr::filter(Pred::is_eq(), TraExpr::source("A"))),
        );
        let r = eval(&e);
        assert_eq!(r.len(), 2);
        assert_eq!(r.get(&[0]).unwrap().values(), &[1., 4.]);
        assert_eq!(r.get(&[1]).unwrap().values(), &[13., 16.]);
        let none = eval(&TraExpr::filter(Pred::always(false), TraExpr::source("A")));
        assert!(none.is_empty());
        let rs = eval(&TraExpr::transform(KernelCall::new("rowSum"), TraExpr::source("A")));
        assert_eq!(rs.get(&[1, 1]).unwrap().values(), &[27., 31.]);
    }

    #[test]
    fn constant_rekey_breaks_uniqueness() {
        let e = TraExpr::rekey(KeyFn::new(vec![Expr::c(0)]), TraExpr::source("A"));
        let r = eval(&e);
        assert_eq!(r.check_constraints().unwrap_err().kind, crate::error::ConstraintKind::Uniqueness);
    }

    #[test]
    fn json_round_trip() {
        let e = TraExpr::aggregate(
            &[0, 2],
            Aggregator::op("matAdd"),
            TraExpr::join(&[1], &[0], Combine::op("matMul"), TraExpr::source("X"), TraExpr::source("Y")),
        );
        assert_eq!(TraExpr::from_json(&e.to_json()).unwrap(), e);
        let f = TraExpr::concat(1, 0, TraExpr::tile(0, 2, TraExpr::filter(Pred::is_eq(), TraExpr::source("A"))));
        assert_eq!(TraExpr::from_json(&f.to_json()).unwrap(), f);
    }
}
