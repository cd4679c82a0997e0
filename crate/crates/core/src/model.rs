//! Array types, dense arrays and tensor relations.
//!
//! A tensor relation is a bag of `(key, array)` pairs kept in canonical
//! (lexicographic key) order. Duplicate keys are representable so that
//! constraint checking can report them instead of silently dropping tuples.

use crate::error::{ConstraintKind, Error, Result};

/// A key: a fixed-length vector of non-negative integers.
pub type Key = Vec<u64>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArrayType {
    bound: Vec<usize>,
}

impl ArrayType {
    pub fn new(bound: Vec<usize>) -> Result<Self> {
        if bound.contains(&0) {
            return Err(Error::Shape(format!("array bound {bound:?} has a zero entry")));
        }
        Ok(ArrayType { bound })
    }

    pub fn matrix(rows: usize, cols: usize) -> Result<Self> {
        Self::new(vec![rows, cols])
    }

    pub fn vector(len: usize) -> Result<Self> {
        Self::new(vec![len])
    }

    pub fn rank(&self) -> usize {
        self.bound.len()
    }

    pub fn bound(&self) -> &[usize] {
        &self.bound
    }

    /// Number of floats in one array of this type.
    pub fn len(&self) -> usize {
        self.bound.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn floats(&self) -> u64 {
        self.bound.iter().map(|&b| b as u64).product()
    }

    /// Row-major offset of a multi-index, or an error if it falls outside the bound.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.rank() || index.iter().zip(&self.bound).any(|(i, b)| i >= b) {
            return Err(Error::OutOfBounds { index: index.to_vec(), bound: self.bound.clone() });
        }
        Ok(index.iter().zip(&self.bound).fold(0, |acc, (i, b)| acc * b + i))
    }

    /// Inverse of [`ArrayType::offset`].
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut out = vec![0; self.rank()];
        for d in (0..self.rank()).rev() {
            out[d] = offset % self.bound[d];
            offset /= self.bound[d];
        }
        out
    }
}

impl std::fmt::Display for ArrayType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "<{}>", join_usize(&self.bound))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    ty: ArrayType,
    values: Vec<f64>,
}

impl DenseArray {
    pub fn new(ty: ArrayType, values: Vec<f64>) -> Result<Self> {
        if values.len() != ty.len() {
            return Err(Error::Shape(format!(
                "array of type {ty} needs {} values, got {}",
                ty.len(),
                values.len()
            )));
        }
        Ok(DenseArray { ty, values })
    }

    pub fn zeros(ty: ArrayType) -> Self {
        let n = ty.len();
        DenseArray { ty, values: vec![0.0; n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(ArrayType::matrix(r, c)?, rows.concat())
    }

    pub fn array_type(&self) -> &ArrayType {
        &self.ty
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.ty.offset(index)?])
    }

    /// Bitwise equality, so that `NaN` payloads and signed zeros compare exactly.
    pub fn bit_eq(&self, other: &DenseArray) -> bool {
        self.ty == other.ty
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &DenseArray) -> f64 {
        if self.ty != other.ty {
            return f64::INFINITY;
        }
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// A set of `(key, array)` tuples with a fixed key arity and array type.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRelation {
    key_arity: usize,
    array_type: ArrayType,
    tuples: Vec<(Key, DenseArray)>,
}

impl TensorRelation {
    pub fn new(key_arity: usize, array_type: ArrayType) -> Self {
        TensorRelation { key_arity, array_type, tuples: Vec::new() }
    }

    /// Builds a relation, checking key arity and array types, and sorts it canonically.
    pub fn from_tuples(
        key_arity: usize,
        array_type: ArrayType,
        tuples: Vec<(Key, DenseArray)>,
    ) -> Result<Self> {
        for (k, a) in &tuples {
            if k.len() != key_arity {
                return Err(Error::Shape(format!("key {k:?} does not have arity {key_arity}")));
            }
            if a.array_type() != &array_type {
                return Err(Error::Shape(format!(
                    "array of type {} in a relation of type {array_type}",
                    a.array_type()
                )));
            }
        }
        let mut rel = TensorRelation { key_arity, array_type, tuples };
        rel.sort();
        Ok(rel)
    }

    fn sort(&mut self) {
        self.tuples.sort_by(|a, b| a.0.cmp(&b.0));
    }

    pub fn insert(&mut self, key: Key, array: DenseArray) -> Result<()> {
        if key.len() != self.key_arity || array.array_type() != &self.array_type {
            return Err(Error::Shape(format!("tuple {key:?} does not fit the relation type")));
        }
        let pos = self.tuples.partition_point(|(k, _)| k <= &key);
        self.tuples.insert(pos, (key, array));
        Ok(())
    }

    pub fn key_arity(&self) -> usize {
        self.key_arity
    }

    pub fn array_type(&self) -> &ArrayType {
        &self.array_type
    }

    pub fn tuples(&self) -> &[(Key, DenseArray)] {
        &self.tuples
    }

    pub fn into_tuples(self) -> Vec<(Key, DenseArray)> {
        self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// First array stored under `key`.
    pub fn get(&self, key: &[u64]) -> Option<&DenseArray> {
        let pos = self.tuples.partition_point(|(k, _)| k.as_slice() < key);
        self.tuples.get(pos).filter(|(k, _)| k.as_slice() == key).map(|(_, a)| a)
    }

    pub fn frontier(&self) -> Key {
        frontier_of(self.key_arity, self.tuples.iter().map(|(k, _)| k))
    }

    pub fn check_constraints(&self) -> std::result::Result<(), Violation> {
        check_keys(self.key_arity, self.tuples.iter().map(|(k, _)| k))
    }

    /// Floats held by the relation, computed from the frontier.
    pub fn float_count(&self) -> Result<u64> {
        if let Err(v) = self.check_constraints() {
            if v.kind == ConstraintKind::Continuity {
                return Err(v.into());
            }
        }
        Ok(self.frontier().iter().product::<u64>() * self.array_type.floats())
    }

    /// Exact equality including float bit patterns.
    pub fn bit_eq(&self, other: &TensorRelation) -> bool {
        self.key_arity == other.key_arity
            && self.array_type == other.array_type
            && self.tuples.len() == other.tuples.len()
            && self.tuples.iter().zip(&other.tuples).all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }

    /// Largest elementwise difference against a relation with the same keys, or
    /// `None` when the key sets differ.
    pub fn max_abs_diff(&self, other: &TensorRelation) -> Option<f64> {
        if self.key_arity != other.key_arity || self.tuples.len() != other.tuples.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for ((ka, a), (kb, b)) in self.tuples.iter().zip(&other.tuples) {
            if ka != kb || a.array_type() != b.array_type() {
                return None;
            }
            worst = worst.max(a.max_abs_diff(b));
        }
        Some(worst)
    }
}

/// A constraint violation with a witness key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ConstraintKind,
    pub witness: Key,
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::Constraint { kind: v.kind, witness: v.witness }
    }
}

/// Elementwise max + 1 over the keys; the zero vector when there are none.
pub fn frontier_of<'a>(arity: usize, keys: impl IntoIterator<Item = &'a Key>) -> Key {
    let mut f = vec![0u64; arity];
    for k in keys {
        for (fd, kd) in f.iter_mut().zip(k) {
            *fd = (*fd).max(kd + 1);
        }
    }
    f
}

/// Uniqueness and continuity check over a key set in canonical order.
pub fn check_keys<'a>(
    arity: usize,
    keys: impl IntoIterator<Item = &'a Key>,
) -> std::result::Result<(), Violation> {
    let keys: Vec<&Key> = keys.into_iter().collect();
    for w in keys.windows(2) {
        if w[0] == w[1] {
            return Err(Violation { kind: ConstraintKind::Uniqueness, witness: w[0].clone() });
        }
    }
    let front = frontier_of(arity, keys.iter().copied());
    let mut it = keys.iter();
    for expected in KeyGrid::new(&front) {
        match it.next() {
            Some(k) if **k == expected => {}
            _ => return Err(Violation { kind: ConstraintKind::Continuity, witness: expected }),
        }
    }
    Ok(())
}

/// Iterator over every key strictly below a frontier, in canonical order.
#[derive(Debug, Clone)]
pub struct KeyGrid {
    front: Key,
    next: Option<Key>,
}

impl KeyGrid {
    pub fn new(front: &[u64]) -> Self {
        let next = if front.contains(&0) { None } else { Some(vec![0; front.len()]) };
        KeyGrid { front: front.to_vec(), next }
    }
}

impl Iterator for KeyGrid {
    type Item = Key;

    fn next(&mut self) -> Option<Key> {
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        let mut d = succ.len();
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            succ[d] += 1;
            if succ[d] < self.front[d] {
                self.next = Some(succ);
                break;
            }
            succ[d] = 0;
        }
        Some(cur)
    }
}

/// Splits a matrix into a grid of `block_rows x block_cols` blocks keyed `<i, j>`.
pub fn blockify(matrix: &DenseArray, block_rows: usize, block_cols: usize) -> Result<TensorRelation> {
    let b = matrix.array_type().bound();
    if b.len() != 2 {
        return Err(Error::Shape(format!("blockify needs a matrix, got rank {}", b.len())));
    }
    let (rows, cols) = (b[0], b[1]);
    if block_rows == 0 || block_cols == 0 || rows % block_rows != 0 || cols % block_cols != 0 {
        return Err(Error::Shape(format!(
            "{rows}x{cols} matrix is not divisible into {block_rows}x{block_cols} blocks"
        )));
    }
    let ty = ArrayType::matrix(block_rows, block_cols)?;
    let mut tuples = Vec::with_capacity((rows / block_rows) * (cols / block_cols));
    for bi in 0..rows / block_rows {
        for bj in 0..cols / block_cols {
            let mut vals = Vec::with_capacity(block_rows * block_cols);
            for r in 0..block_rows {
                let start = (bi * block_rows + r) * cols + bj * block_cols;
                vals.extend_from_slice(&matrix.values()[start..start + block_cols]);
            }
            tuples.push((vec![bi as u64, bj as u64], DenseArray::new(ty.clone(), vals)?));
        }
    }
    TensorRelation::from_tuples(2, ty, tuples)
}

/// Reassembles a matrix from a constraint-satisfying arity-2 relation of matrix blocks.
pub fn unblockify(rel: &TensorRelation) -> Result<DenseArray> {
    if rel.key_arity() != 2 || rel.array_type().rank() != 2 {
        return Err(Error::Shape("unblockify needs key arity 2 and matrix blocks".into()));
    }
    rel.check_constraints()?;
    let front = rel.frontier();
    let (br, bc) = (rel.array_type().bound()[0], rel.array_type().bound()[1]);
    let (rows, cols) = (front[0] as usize * br, front[1] as usize * bc);
    let mut vals = vec![0.0; rows * cols];
    for (k, a) in rel.tuples() {
        let (bi, bj) = (k[0] as usize, k[1] as usize);
        for r in 0..br {
            let dst = (bi * br + r) * cols + bj * bc;
            vals[dst..dst + bc].copy_from_slice(&a.values()[r * bc..(r + 1) * bc]);
        }
    }
    DenseArray::new(ArrayType::matrix(rows, cols)?, vals)
}

pub(crate) fn join_usize(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn join_u64(v: &[u64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
