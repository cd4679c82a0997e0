//! Operator parameters shared by the logical and physical layers: kernel
//! calls, multi-map key/array functions, join projections and aggregators.
//!
//! Everything here is generic over [`Payload`], so the same code computes
//! real arrays and symbolic array types.

use serde_json::{json, Value};

use crate::error::{ConstraintKind, Error, Result};
use crate::kernels::KernelRegistry;
use crate::keyexpr::KeyFn;
use crate::model::{ArrayType, DenseArray, Key};

/// A kernel name plus scalar arguments (`scalarScale(0.1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCall {
    pub name: String,
    pub args: Vec<f64>,
}

impl KernelCall {
    pub fn new(name: &str) -> Self {
        KernelCall { name: name.to_string(), args: Vec::new() }
    }

    pub fn with_args(name: &str, args: Vec<f64>) -> Self {
        KernelCall { name: name.to_string(), args }
    }

    pub fn to_json(&self) -> Value {
        if self.args.is_empty() {
            json!(self.name)
        } else {
            json!({"name": self.name, "args": self.args})
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        if let Some(s) = v.as_str() {
            return Ok(KernelCall::new(s));
        }
        let name = v
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Format(format!("kernel call needs a name: {v}")))?;
        let args = match v.get("args") {
            None => Vec::new(),
            Some(a) => a
                .as_array()
                .ok_or_else(|| Error::Format(format!("kernel args must be a list: {a}")))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Format(format!("bad kernel arg {x}"))))
                .collect::<Result<_>>()?,
        };
        Ok(KernelCall { name: name.to_string(), args })
    }
}

impl std::fmt::Display for KernelCall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.args.is_empty() {
            write!(f, "{}", self.name)
        } else {
            let a: Vec<String> = self.args.iter().map(|x| format!("{x:?}")).collect();
            write!(f, "{}({})", self.name, a.join(","))
        }
    }
}

fn calls_json(calls: &[KernelCall]) -> Value {
    Value::Array(calls.iter().map(KernelCall::to_json).collect())
}

fn calls_from_json(v: Option<&Value>) -> Result<Vec<KernelCall>> {
    match v {
        None => Ok(Vec::new()),
        Some(Value::Array(a)) => a.iter().map(KernelCall::from_json).collect(),
        Some(other) => Err(Error::Format(format!("expected a list of kernel calls: {other}"))),
    }
}

fn chain_text(calls: &[KernelCall]) -> String {
    calls.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

/// Something that flows through operators: a dense array, or just its type
/// when costing plans symbolically.
pub trait Payload: Clone + std::fmt::Debug + Send + Sync + 'static {
    fn ty(&self) -> &ArrayType;
    fn unary(&self, reg: &KernelRegistry, call: &KernelCall) -> Result<Self>;
    fn binary(reg: &KernelRegistry, call: &KernelCall, l: &Self, r: &Self) -> Result<Self>;
    /// Chunk `idx` of size `size` along array dimension `dim`.
    fn tile_part(&self, dim: usize, size: usize, idx: usize) -> Result<Self>;
    fn concat(parts: &[&Self], dim: usize) -> Result<Self>;
    /// `[min value, global index]` of a rank-1 array stored under `key`.
    fn min_state(&self, key: &[u64]) -> Result<Self>;
    fn min_merge(a: &Self, b: &Self) -> Result<Self>;
    /// Equality used when collapsing replicated copies.
    fn same_payload(&self, other: &Self) -> bool;

    fn floats(&self) -> u64 {
        self.ty().floats()
    }
}

fn tile_type(t: &ArrayType, dim: usize, size: usize) -> Result<ArrayType> {
    let b = t.bound();
    if dim >= b.len() || size == 0 || !b[dim].is_multiple_of(size) {
        return Err(Error::Shape(format!("cannot tile dimension {dim} of {t} into chunks of {size}")));
    }
    let mut nb = b.to_vec();
    nb[dim] = size;
    ArrayType::new(nb)
}

fn concat_type(parts: &[&ArrayType], dim: usize) -> Result<ArrayType> {
    let first = parts.first().ok_or_else(|| Error::Shape("concatenating zero arrays".into()))?;
    if dim >= first.rank() {
        return Err(Error::Shape(format!("cannot concatenate {first} along dimension {dim}")));
    }
    let mut total = 0;
    for p in parts {
        let same_elsewhere = p.rank() == first.rank()
            && p.bound().iter().zip(first.bound()).enumerate().all(|(d, (a, b))| d == dim || a == b);
        if !same_elsewhere {
            return Err(Error::Shape(format!("cannot concatenate {p} with {first} along dimension {dim}")));
        }
        total += p.bound()[dim];
    }
    let mut nb = first.bound().to_vec();
    nb[dim] = total;
    ArrayType::new(nb)
}

fn min_state_type(t: &ArrayType) -> Result<ArrayType> {
    if t.rank() != 1 {
        return Err(Error::kernel("minIndex", format!("expects rank-1 arrays, got {t}")));
    }
    ArrayType::vector(2)
}

fn state_type_check(t: &ArrayType) -> Result<()> {
    if t.bound() != [2] {
        return Err(Error::kernel("minIndex", format!("merge expects <2> states, got {t}")));
    }
    Ok(())
}

impl Payload for ArrayType {
    fn ty(&self) -> &ArrayType {
        self
    }

    fn unary(&self, reg: &KernelRegistry, call: &KernelCall) -> Result<Self> {
        reg.unary_type(&call.name, &call.args, self)
    }

    fn binary(reg: &KernelRegistry, call: &KernelCall, l: &Self, r: &Self) -> Result<Self> {
        reg.binary_type(&call.name, &call.args, l, r)
    }

    fn tile_part(&self, dim: usize, size: usize, _idx: usize) -> Result<Self> {
        tile_type(self, dim, size)
    }

    fn concat(parts: &[&Self], dim: usize) -> Result<Self> {
        concat_type(parts, dim)
    }

    fn min_state(&self, _key: &[u64]) -> Result<Self> {
        min_state_type(self)
    }

    fn min_merge(a: &Self, b: &Self) -> Result<Self> {
        state_type_check(a)?;
        state_type_check(b)?;
        Ok(a.clone())
    }

    fn same_payload(&self, other: &Self) -> bool {
        self == other
    }
}

impl Payload for DenseArray {
    fn ty(&self) -> &ArrayType {
        self.array_type()
    }

    fn unary(&self, reg: &KernelRegistry, call: &KernelCall) -> Result<Self> {
        reg.apply_unary(&call.name, &call.args, self)
    }

    fn binary(reg: &KernelRegistry, call: &KernelCall, l: &Self, r: &Self) -> Result<Self> {
        reg.apply_binary(&call.name, &call.args, l, r)
    }

    fn tile_part(&self, dim: usize, size: usize, idx: usize) -> Result<Self> {
        let t = tile_type(self.array_type(), dim, size)?;
        let src = self.array_type();
        let mut vals = Vec::with_capacity(t.len());
        for off in 0..t.len() {
            let mut ix = t.unravel(off);
            ix[dim] += idx * size;
            vals.push(self.values()[src.offset(&ix)?]);
        }
        DenseArray::new(t, vals)
    }

    fn concat(parts: &[&Self], dim: usize) -> Result<Self> {
        let types: Vec<&ArrayType> = parts.iter().map(|p| p.array_type()).collect();
        let t = concat_type(&types, dim)?;
        let mut vals = Vec::with_capacity(t.len());
        for off in 0..t.len() {
            let mut ix = t.unravel(off);
            let mut which = 0;
            while ix[dim] >= types[which].bound()[dim] {
                ix[dim] -= types[which].bound()[dim];
                which += 1;
            }
            vals.push(parts[which].values()[types[which].offset(&ix)?]);
        }
        DenseArray::new(t, vals)
    }

    fn min_state(&self, key: &[u64]) -> Result<Self> {
        let t = min_state_type(self.array_type())?;
        let n = self.values().len() as u64;
        let base = key.first().copied().unwrap_or(0) * n;
        let mut best = (f64::INFINITY, u64::MAX);
        for (i, v) in self.values().iter().enumerate() {
            if *v < best.0 || best.1 == u64::MAX {
                best = (*v, base + i as u64);
            }
        }
        DenseArray::new(t, vec![best.0, best.1 as f64])
    }

    fn min_merge(a: &Self, b: &Self) -> Result<Self> {
        state_type_check(a.array_type())?;
        state_type_check(b.array_type())?;
        let (av, bv) = (a.values(), b.values());
        let take_b = bv[0] < av[0] || (bv[0] == av[0] && bv[1] < av[1]);
        Ok(if take_b { b.clone() } else { a.clone() })
    }

    fn same_payload(&self, other: &Self) -> bool {
        self.bit_eq(other)
    }
}

pub fn apply_chain<P: Payload>(reg: &KernelRegistry, calls: &[KernelCall], a: &P) -> Result<P> {
    let mut cur = a.clone();
    for c in calls {
        cur = cur.unary(reg, c)?;
    }
    Ok(cur)
}

/// Key side of a local multi-map.
#[derive(Debug, Clone, PartialEq)]
pub enum KeyMap {
    Func(KeyFn),
    /// `insertDim(dim, count)`: `count` outputs with `0..count` inserted at `dim`.
    InsertDim { dim: usize, count: usize },
    /// `keyTileOp`: `count` outputs with the tile counter appended.
    Tile { count: usize },
}

impl KeyMap {
    pub fn identity(arity: usize) -> Self {
        KeyMap::Func(KeyFn::identity(arity))
    }

    pub fn arity(&self) -> usize {
        match self {
            KeyMap::Func(_) => 1,
            KeyMap::InsertDim { count, .. } | KeyMap::Tile { count } => *count,
        }
    }

    pub fn out_key_arity(&self, in_arity: usize) -> Result<usize> {
        match self {
            KeyMap::Func(f) => {
                if f.input_arity_needed() > in_arity {
                    return Err(Error::validation(
                        "map",
                        format!("key function {f} reads past key arity {in_arity}"),
                    ));
                }
                Ok(f.arity())
            }
            KeyMap::InsertDim { dim, .. } => {
                if *dim > in_arity {
                    return Err(Error::validation("map", format!("insertDim({dim}) on key arity {in_arity}")));
                }
                Ok(in_arity + 1)
            }
            KeyMap::Tile { .. } => Ok(in_arity + 1),
        }
    }

    pub fn is_identity(&self, arity: usize) -> bool {
        matches!(self, KeyMap::Func(f) if f.is_identity(arity))
    }

    pub fn apply(&self, key: &[u64]) -> Result<Vec<Key>> {
        match self {
            KeyMap::Func(f) => Ok(vec![f.apply(key)?]),
            KeyMap::InsertDim { dim, count } => Ok((0..*count as u64)
                .map(|i| {
                    let mut k = key.to_vec();
                    k.insert(*dim, i);
                    k
                })
                .collect()),
            KeyMap::Tile { count } => Ok((0..*count as u64)
                .map(|i| {
                    let mut k = key.to_vec();
                    k.push(i);
                    k
                })
                .collect()),
        }
    }

    /// For each output key position, the input position copied there verbatim.
    pub fn copied_components(&self, in_arity: usize) -> Vec<Option<usize>> {
        match self {
            KeyMap::Func(f) => f.copied_components(),
            KeyMap::InsertDim { dim, .. } => (0..=in_arity)
                .map(|p| match p.cmp(dim) {
                    std::cmp::Ordering::Less => Some(p),
                    std::cmp::Ordering::Equal => None,
                    std::cmp::Ordering::Greater => Some(p - 1),
                })
                .collect(),
            KeyMap::Tile { .. } => (0..=in_arity).map(|p| (p < in_arity).then_some(p)).collect(),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            KeyMap::Func(f) => json!({"kind": "func", "outputs": f.to_json()}),
            KeyMap::InsertDim { dim, count } => json!({"kind": "insertDim", "dim": dim, "count": count}),
            KeyMap::Tile { count } => json!({"kind": "keyTileOp", "count": count}),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        match v.get("kind").and_then(Value::as_str) {
            Some("func") => Ok(KeyMap::Func(KeyFn::from_json(field(v, "outputs")?)?)),
            Some("insertDim") => Ok(KeyMap::InsertDim { dim: usize_field(v, "dim")?, count: usize_field(v, "count")? }),
            Some("keyTileOp") => Ok(KeyMap::Tile { count: usize_field(v, "count")? }),
            _ => Err(Error::Format(format!("unknown key map {v}"))),
        }
    }
}

impl std::fmt::Display for KeyMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KeyMap::Func(k) => write!(f, "{k}"),
            KeyMap::InsertDim { dim, count } => write!(f, "insertDim({dim},{count})"),
            KeyMap::Tile { count } => write!(f, "keyTileOp({count})"),
        }
    }
}

/// Array side of a local multi-map.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayMap {
    /// Unary kernels applied left to right; empty means `idOp`.
    Chain(Vec<KernelCall>),
    Duplicate { count: usize },
    /// `arrayTileOp(dim, size)`.
    Tile { dim: usize, size: usize },
}

impl ArrayMap {
    pub fn identity() -> Self {
        ArrayMap::Chain(Vec::new())
    }

    pub fn arity(&self, ty: &ArrayType) -> Result<usize> {
        match self {
            ArrayMap::Chain(_) => Ok(1),
            ArrayMap::Duplicate { count } => Ok(*count),
            ArrayMap::Tile { dim, size } => {
                tile_type(ty, *dim, *size)?;
                Ok(ty.bound()[*dim] / size)
            }
        }
    }

    pub fn apply<P: Payload>(&self, reg: &KernelRegistry, a: &P) -> Result<Vec<P>> {
        match self {
            ArrayMap::Chain(calls) => Ok(vec![apply_chain(reg, calls, a)?]),
            ArrayMap::Duplicate { count } => Ok(vec![a.clone(); *count]),
            ArrayMap::Tile { dim, size } => {
                let n = self.arity(a.ty())?;
                (0..n).map(|i| a.tile_part(*dim, *size, i)).collect()
            }
        }
    }

    pub fn out_type(&self, reg: &KernelRegistry, ty: &ArrayType) -> Result<ArrayType> {
        let outs = self.apply(reg, ty)?;
        outs.into_iter().next().ok_or_else(|| Error::validation("map", "array map produces no outputs"))
    }

    pub fn to_json(&self) -> Value {
        match self {
            ArrayMap::Chain(c) => json!({"kind": "chain", "kernels": calls_json(c)}),
            ArrayMap::Duplicate { count } => json!({"kind": "duplicate", "count": count}),
            ArrayMap::Tile { dim, size } => json!({"kind": "arrayTileOp", "dim": dim, "size": size}),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        match v.get("kind").and_then(Value::as_str) {
            Some("chain") => Ok(ArrayMap::Chain(calls_from_json(v.get("kernels"))?)),
            Some("duplicate") => Ok(ArrayMap::Duplicate { count: usize_field(v, "count")? }),
            Some("arrayTileOp") => Ok(ArrayMap::Tile { dim: usize_field(v, "dim")?, size: usize_field(v, "size")? }),
            _ => Err(Error::Format(format!("unknown array map {v}"))),
        }
    }
}

impl std::fmt::Display for ArrayMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArrayMap::Chain(c) if c.is_empty() => write!(f, "idOp"),
            ArrayMap::Chain(c) => write!(f, "{}", chain_text(c)),
            ArrayMap::Duplicate { count } => write!(f, "duplicate({count})"),
            ArrayMap::Tile { dim, size } => write!(f, "arrayTileOp({dim},{size})"),
        }
    }
}

/// `post(op(pre(x), pre(y)))`: a binary kernel with unary kernels fused on
/// either side. Used as a join projection and as an aggregation operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Combine {
    pub pre: Vec<KernelCall>,
    pub op: KernelCall,
    pub post: Vec<KernelCall>,
}

impl Combine {
    pub fn op(name: &str) -> Self {
        Combine { pre: Vec::new(), op: KernelCall::new(name), post: Vec::new() }
    }

    pub fn is_plain(&self) -> bool {
        self.pre.is_empty() && self.post.is_empty()
    }

    pub fn apply<P: Payload>(&self, reg: &KernelRegistry, l: &P, r: &P) -> Result<P> {
        let l = apply_chain(reg, &self.pre, l)?;
        let r = apply_chain(reg, &self.pre, r)?;
        apply_chain(reg, &self.post, &P::binary(reg, &self.op, &l, &r)?)
    }

    pub fn to_json(&self) -> Value {
        if self.is_plain() && self.op.args.is_empty() {
            return json!(self.op.name);
        }
        json!({"pre": calls_json(&self.pre), "op": self.op.to_json(), "post": calls_json(&self.post)})
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        if let Some(s) = v.as_str() {
            return Ok(Combine::op(s));
        }
        Ok(Combine {
            pre: calls_from_json(v.get("pre"))?,
            op: KernelCall::from_json(field(v, "op")?)?,
            post: calls_from_json(v.get("post"))?,
        })
    }
}

impl std::fmt::Display for Combine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.op)?;
        if !self.pre.is_empty() {
            write!(f, "[pre={}]", chain_text(&self.pre))?;
        }
        if !self.post.is_empty() {
            write!(f, "[post={}]", chain_text(&self.post))?;
        }
        Ok(())
    }
}

/// How an aggregation reduces the arrays of a group.
#[derive(Debug, Clone, PartialEq)]
pub enum Aggregator {
    Binary(Combine),
    /// Key-aware arg-min. With `merge_states` the inputs are already
    /// `[value, index]` states from an earlier phase.
    MinIndex { merge_states: bool },
    /// `arrayConcatOp`: concatenates the `count` arrays of a group along
    /// `array_dim`, ordered by key component `key_dim`.
    Concat { key_dim: usize, array_dim: usize, count: usize },
}

impl Aggregator {
    pub fn op(name: &str) -> Self {
        Aggregator::Binary(Combine::op(name))
    }

    pub fn validate(&self, reg: &KernelRegistry, key_arity: usize, group_by: &[usize]) -> Result<()> {
        match self {
            Aggregator::Binary(c) => {
                if !reg.is_assoc_comm(&c.op.name) {
                    return Err(Error::validation(
                        "aggregate",
                        format!("aggregation kernel `{}` is not associative and commutative", c.op.name),
                    ));
                }
                Ok(())
            }
            Aggregator::MinIndex { merge_states: false } => {
                if key_arity != 1 || !group_by.is_empty() {
                    return Err(Error::validation(
                        "aggregate",
                        "minIndex groups an arity-1 relation into a single state",
                    ));
                }
                Ok(())
            }
            Aggregator::MinIndex { merge_states: true } => Ok(()),
            Aggregator::Concat { key_dim, .. } => {
                let expect: Vec<usize> = (0..key_arity).filter(|d| d != key_dim).collect();
                if *key_dim >= key_arity || group_by != expect.as_slice() {
                    return Err(Error::validation("aggregate", "arrayConcatOp must group by the complement of its key dimension"));
                }
                Ok(())
            }
        }
    }

    pub fn out_type(&self, reg: &KernelRegistry, ty: &ArrayType) -> Result<ArrayType> {
        match self {
            Aggregator::Binary(c) => c.apply(reg, ty, ty),
            Aggregator::MinIndex { merge_states: false } => min_state_type(ty),
            Aggregator::MinIndex { merge_states: true } => {
                state_type_check(ty)?;
                Ok(ty.clone())
            }
            Aggregator::Concat { array_dim, count, .. } => {
                let parts = vec![ty; (*count).max(1)];
                concat_type(&parts, *array_dim)
            }
        }
    }

    /// Reduces one group, given in canonical key order.
    pub fn reduce<P: Payload>(&self, reg: &KernelRegistry, group: &[(&Key, &P)]) -> Result<P> {
        let (first, rest) = group.split_first().ok_or_else(|| Error::Shape("empty aggregation group".into()))?;
        match self {
            Aggregator::Binary(c) => {
                let mut acc = apply_chain(reg, &c.pre, first.1)?;
                for (_, a) in rest {
                    let x = apply_chain(reg, &c.pre, *a)?;
                    acc = P::binary(reg, &c.op, &acc, &x)?;
                }
                apply_chain(reg, &c.post, &acc)
            }
            Aggregator::MinIndex { merge_states } => {
                let lift = |k: &Key, a: &P| if *merge_states { Ok(a.clone()) } else { a.min_state(k) };
                let mut acc = lift(first.0, first.1)?;
                for (k, a) in rest {
                    acc = P::min_merge(&acc, &lift(k, a)?)?;
                }
                Ok(acc)
            }
            Aggregator::Concat { key_dim, array_dim, count } => {
                for (i, (k, _)) in group.iter().enumerate() {
                    if k[*key_dim] != i as u64 {
                        let mut w = (*k).clone();
                        w[*key_dim] = i as u64;
                        return Err(Error::Constraint { kind: ConstraintKind::Continuity, witness: w });
                    }
                }
                if group.len() != *count {
                    let mut w = first.0.clone();
                    w[*key_dim] = group.len() as u64;
                    return Err(Error::Constraint { kind: ConstraintKind::Continuity, witness: w });
                }
                let parts: Vec<&P> = group.iter().map(|(_, a)| *a).collect();
                P::concat(&parts, *array_dim)
            }
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Aggregator::Binary(c) => json!({"kind": "binary", "combine": c.to_json()}),
            Aggregator::MinIndex { merge_states } => json!({"kind": "minIndex", "mergeStates": merge_states}),
            Aggregator::Concat { key_dim, array_dim, count } => {
                json!({"kind": "arrayConcatOp", "keyDim": key_dim, "arrayDim": array_dim, "count": count})
            }
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        if let Some(s) = v.as_str() {
            return Ok(if s == "minIndex" { Aggregator::MinIndex { merge_states: false } } else { Aggregator::op(s) });
        }
        match v.get("kind").and_then(Value::as_str) {
            Some("binary") => Ok(Aggregator::Binary(Combine::from_json(field(v, "combine")?)?)),
            Some("minIndex") => Ok(Aggregator::MinIndex {
                merge_states: v.get("mergeStates").and_then(Value::as_bool).unwrap_or(false),
            }),
            Some("arrayConcatOp") => Ok(Aggregator::Concat {
                key_dim: usize_field(v, "keyDim")?,
                array_dim: usize_field(v, "arrayDim")?,
                count: usize_field(v, "count")?,
            }),
            _ => Err(Error::Format(format!("unknown aggregator {v}"))),
        }
    }
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Aggregator::Binary(c) => write!(f, "{c}"),
            Aggregator::MinIndex { merge_states: false } => write!(f, "minIndex"),
            Aggregator::MinIndex { merge_states: true } => write!(f, "minIndex[merge]"),
            Aggregator::Concat { key_dim, array_dim, count } => {
                write!(f, "arrayConcatOp({key_dim},{array_dim},{count})")
            }
        }
    }
}

pub(crate) fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value> {
    v.get(name).ok_or_else(|| Error::Format(format!("missing field `{name}` in {v}")))
}

pub(crate) fn usize_field(v: &Value, name: &str) -> Result<usize> {
    field(v, name)?
        .as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::Format(format!("field `{name}` must be a non-negative integer")))
}

pub(crate) fn dims_field(v: &Value, name: &str) -> Result<Vec<usize>> {
    dims_from_json(field(v, name)?)
}

pub(crate) fn dims_from_json(v: &Value) -> Result<Vec<usize>> {
    v.as_array()
        .ok_or_else(|| Error::Format(format!("expected a dimension list, got {v}")))?
        .iter()
        .map(|x| x.as_u64().map(|d| d as usize).ok_or_else(|| Error::Format(format!("bad dimension {x}"))))
        .collect()
}
