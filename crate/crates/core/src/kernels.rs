//! Named dense-array kernels and the algebraic metadata the optimizer relies on.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, OnceLock};

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ArrayType, DenseArray};

pub type UnaryApply = Arc<dyn Fn(&[f64], &DenseArray) -> Result<DenseArray> + Send + Sync>;
pub type UnaryTypeMap = Arc<dyn Fn(&[f64], &ArrayType) -> Result<ArrayType> + Send + Sync>;
pub type BinaryApply = Arc<dyn Fn(&[f64], &DenseArray, &DenseArray) -> Result<DenseArray> + Send + Sync>;
pub type BinaryTypeMap = Arc<dyn Fn(&[f64], &ArrayType, &ArrayType) -> Result<ArrayType> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Unary,
    Binary,
    /// Reduces `(value, global index)` states; needs the tuple key.
    KeyAwareAggregator,
    /// Key or array reshaping used by the multi-map and tiling operators.
    Structural,
}

#[derive(Clone)]
pub enum KernelImpl {
    Unary { apply: UnaryApply, type_map: UnaryTypeMap },
    Binary { apply: BinaryApply, type_map: BinaryTypeMap },
    /// Semantics live in the operator that interprets the kernel.
    Builtin,
}

#[derive(Clone)]
pub struct KernelDescriptor {
    pub name: String,
    pub kind: KernelKind,
    pub associative: bool,
    pub commutative: bool,
    /// For a unary kernel `d`: `d(a(x,y)) == a(d(x),d(y))` for each listed `a`.
    /// For a binary kernel `m`: `m(x, a(y,z)) == a(m(x,y), m(x,z))` and the
    /// mirrored law on the left operand.
    pub distributes_over: BTreeSet<String>,
    /// Square type used when law-checking the declared flags.
    pub sample_type: Option<ArrayType>,
    /// Scalar arguments used when law-checking the declared flags.
    pub sample_args: Vec<f64>,
    pub imp: KernelImpl,
}

impl std::fmt::Debug for KernelDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelDescriptor")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("associative", &self.associative)
            .field("commutative", &self.commutative)
            .field("distributes_over", &self.distributes_over)
            .finish()
    }
}

impl KernelDescriptor {
    pub fn unary(
        name: &str,
        apply: impl Fn(&[f64], &DenseArray) -> Result<DenseArray> + Send + Sync + 'static,
        type_map: impl Fn(&[f64], &ArrayType) -> Result<ArrayType> + Send + Sync + 'static,
    ) -> Self {
        KernelDescriptor {
            name: name.to_string(),
            kind: KernelKind::Unary,
            associative: false,
            commutative: false,
            distributes_over: BTreeSet::new(),
            sample_type: None,
            sample_args: Vec::new(),
            imp: KernelImpl::Unary { apply: Arc::new(apply), type_map: Arc::new(type_map) },
        }
    }

    pub fn binary(
        name: &str,
        apply: impl Fn(&[f64], &DenseArray, &DenseArray) -> Result<DenseArray> + Send + Sync + 'static,
        type_map: impl Fn(&[f64], &ArrayType, &ArrayType) -> Result<ArrayType> + Send + Sync + 'static,
    ) -> Self {
        KernelDescriptor {
            name: name.to_string(),
            kind: KernelKind::Binary,
            associative: false,
            commutative: false,
            distributes_over: BTreeSet::new(),
            sample_type: None,
            sample_args: Vec::new(),
            imp: KernelImpl::Binary { apply: Arc::new(apply), type_map: Arc::new(type_map) },
        }
    }

    fn builtin(name: &str, kind: KernelKind) -> Self {
        KernelDescriptor {
            name: name.to_string(),
            kind,
            associative: false,
            commutative: false,
            distributes_over: BTreeSet::new(),
            sample_type: None,
            sample_args: Vec::new(),
            imp: KernelImpl::Builtin,
        }
    }

    pub fn assoc_comm(mut self) -> Self {
        self.associative = true;
        self.commutative = true;
        self
    }

    pub fn distributes(mut self, over: &[&str]) -> Self {
        self.distributes_over.extend(over.iter().map(|s| s.to_string()));
        self
    }

    pub fn with_sample(mut self, ty: ArrayType) -> Self {
        self.sample_type = Some(ty);
        self
    }

    pub fn with_sample_args(mut self, args: &[f64]) -> Self {
        self.sample_args = args.to_vec();
        self
    }
}

/// Kernel lookup table. Built once, then shared read-only.
#[derive(Clone, Default)]
pub struct KernelRegistry {
    map: BTreeMap<String, KernelDescriptor>,
}

impl std::fmt::Debug for KernelRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.map.keys()).finish()
    }
}

impl KernelRegistry {
    pub fn empty() -> Self {
        KernelRegistry::default()
    }

    /// The process-wide registry holding the builtin inventory.
    pub fn global() -> &'static KernelRegistry {
        static REG: OnceLock<KernelRegistry> = OnceLock::new();
        REG.get_or_init(KernelRegistry::builtin)
    }

    pub fn register(&mut self, desc: KernelDescriptor) -> Result<()> {
        if self.map.contains_key(&desc.name) {
            return Err(Error::DuplicateKernel(desc.name));
        }
        self.map.insert(desc.name.clone(), desc);
        Ok(())
    }

    /// Registers a kernel after law-checking its declared flags on random inputs.
    pub fn register_checked(&mut self, desc: KernelDescriptor, rng: &mut impl Rng) -> Result<()> {
        if self.map.contains_key(&desc.name) {
            return Err(Error::DuplicateKernel(desc.name));
        }
        let name = desc.name.clone();
        self.map.insert(name.clone(), desc);
        if let Err(msg) = self.verify_flags(&name, 32, rng) {
            self.map.remove(&name);
            return Err(Error::kernel(name, msg));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&KernelDescriptor> {
        self.map.get(name).ok_or_else(|| Error::UnknownKernel(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn kind(&self, name: &str) -> Result<KernelKind> {
        Ok(self.get(name)?.kind)
    }

    pub fn is_assoc_comm(&self, name: &str) -> bool {
        self.map.get(name).is_some_and(|d| d.associative && d.commutative)
    }

    pub fn distributes(&self, unary: &str, over: &str) -> bool {
        unary == "idOp" || self.map.get(unary).is_some_and(|d| d.distributes_over.contains(over))
    }

    pub fn apply_unary(&self, name: &str, args: &[f64], a: &DenseArray) -> Result<DenseArray> {
        match &self.get(name)?.imp {
            KernelImpl::Unary { apply, type_map } => {
                type_map(args, a.array_type())?;
                apply(args, a)
            }
            _ => Err(Error::kernel(name, "not a unary kernel")),
        }
    }

    pub fn unary_type(&self, name: &str, args: &[f64], t: &ArrayType) -> Result<ArrayType> {
        match &self.get(name)?.imp {
            KernelImpl::Unary { type_map, .. } => type_map(args, t),
            _ => Err(Error::kernel(name, "not a unary kernel")),
        }
    }

    pub fn apply_binary(&self, name: &str, args: &[f64], l: &DenseArray, r: &DenseArray) -> Result<DenseArray> {
        match &self.get(name)?.imp {
            KernelImpl::Binary { apply, type_map } => {
                type_map(args, l.array_type(), r.array_type())?;
                apply(args, l, r)
            }
            _ => Err(Error::kernel(name, "not a binary kernel")),
        }
    }

    pub fn binary_type(&self, name: &str, args: &[f64], l: &ArrayType, r: &ArrayType) -> Result<ArrayType> {
        match &self.get(name)?.imp {
            KernelImpl::Binary { type_map, .. } => type_map(args, l, r),
            _ => Err(Error::kernel(name, "not a binary kernel")),
        }
    }

    /// Randomized law check of every flag declared on `name`.
    ///
    /// Integer-valued inputs must satisfy the laws exactly; uniform floats
    /// within `1e-12`.
    pub fn verify_flags(&self, name: &str, trials: usize, rng: &mut impl Rng) -> std::result::Result<(), String> {
        let desc = self.get(name).map_err(|e| e.to_string())?;
        let ty = desc.sample_type.clone().unwrap_or_else(|| ArrayType::matrix(3, 3).unwrap());
        for trial in 0..trials {
            let integer = trial % 2 == 0;
            let mut gen = || random_array(&ty, integer, rng);
            let (x, y, z) = (gen(), gen(), gen());
            let tol = if integer { 0.0 } else { 1e-12 };
            let close = |a: &DenseArray, b: &DenseArray, law: &str| -> std::result::Result<(), String> {
                if a.array_type() != b.array_type() || a.max_abs_diff(b) > tol {
                    Err(format!("{law} law fails for `{name}`"))
                } else {
                    Ok(())
                }
            };
            let bin = |op: &str, a: &DenseArray, b: &DenseArray| self.apply_binary(op, &[], a, b).map_err(|e| e.to_string());
            match desc.kind {
                KernelKind::Binary => {
                    if desc.associative {
                        close(&bin(name, &bin(name, &x, &y)?, &z)?, &bin(name, &x, &bin(name, &y, &z)?)?, "associativity")?;
                    }
                    if desc.commutative {
                        close(&bin(name, &x, &y)?, &bin(name, &y, &x)?, "commutativity")?;
                    }
                    for over in &desc.distributes_over {
                        let lhs = bin(name, &x, &bin(over, &y, &z)?)?;
                        let rhs = bin(over, &bin(name, &x, &y)?, &bin(name, &x, &z)?)?;
                        close(&lhs, &rhs, "left distributivity")?;
                        let lhs = bin(name, &bin(over, &y, &z)?, &x)?;
                        let rhs = bin(over, &bin(name, &y, &x)?, &bin(name, &z, &x)?)?;
                        close(&lhs, &rhs, "right distributivity")?;
                    }
                }
                KernelKind::Unary => {
                    let un = |a: &DenseArray| self.apply_unary(name, &desc.sample_args, a).map_err(|e| e.to_string());
                    for over in &desc.distributes_over {
                        close(&un(&bin(over, &x, &y)?)?, &bin(over, &un(&x)?, &un(&y)?)?, "distributivity")?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn builtin() -> Self {
        let mut r = KernelRegistry::empty();
        for d in builtin_descriptors() {
            r.register(d).expect("builtin names are distinct");
        }
        r
    }
}

fn random_array(ty: &ArrayType, integer: bool, rng: &mut impl Rng) -> DenseArray {
    let vals = (0..ty.len())
        .map(|_| if integer { rng.gen_range(-4i32..=4) as f64 } else { rng.gen_range(-1.0..1.0) })
        .collect();
    DenseArray::new(ty.clone(), vals).unwrap()
}

fn same_type(name: &str, l: &ArrayType, r: &ArrayType) -> Result<ArrayType> {
    if l != r {
        return Err(Error::kernel(name, format!("operand types {l} and {r} differ")));
    }
    Ok(l.clone())
}

fn matrix_dims(name: &str, t: &ArrayType) -> Result<(usize, usize)> {
    match t.bound() {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::kernel(name, format!("expected a matrix, got {t}"))),
    }
}

fn zip_with(l: &DenseArray, r: &DenseArray, f: impl Fn(f64, f64) -> f64) -> DenseArray {
    let vals = l.values().iter().zip(r.values()).map(|(a, b)| f(*a, *b)).collect();
    DenseArray::new(l.array_type().clone(), vals).unwrap()
}

fn map_values(a: &DenseArray, f: impl Fn(f64) -> f64) -> DenseArray {
    DenseArray::new(a.array_type().clone(), a.values().iter().map(|v| f(*v)).collect()).unwrap()
}

fn elementwise_binary(name: &'static str, f: fn(f64, f64) -> f64) -> KernelDescriptor {
    KernelDescriptor::binary(
        name,
        move |_, l, r| {
            same_type(name, l.array_type(), r.array_type())?;
            Ok(zip_with(l, r, f))
        },
        move |_, l, r| same_type(name, l, r),
    )
}

fn elementwise_unary(name: &'static str, f: fn(f64) -> f64) -> KernelDescriptor {
    KernelDescriptor::unary(name, move |_, a| Ok(map_values(a, f)), |_, t| Ok(t.clone()))
}

/// `(l, r, transpose_l, transpose_r)` general matrix product.
fn gemm(name: &str, l: &DenseArray, r: &DenseArray, tl: bool, tr: bool) -> Result<DenseArray> {
    let out = gemm_type(name, l.array_type(), r.array_type(), tl, tr)?;
    let (lr, lc) = matrix_dims(name, l.array_type())?;
    let (rr, rc) = matrix_dims(name, r.array_type())?;
    let (m, k) = if tl { (lc, lr) } else { (lr, lc) };
    let n = if tr { rr } else { rc };
    let lv = l.values();
    let rv = r.values();
    let mut vals = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                let a = if tl { lv[p * lc + i] } else { lv[i * lc + p] };
                let b = if tr { rv[j * rc + p] } else { rv[p * rc + j] };
                acc += a * b;
            }
            vals[i * n + j] = acc;
        }
    }
    DenseArray::new(out, vals)
}

fn gemm_type(name: &str, l: &ArrayType, r: &ArrayType, tl: bool, tr: bool) -> Result<ArrayType> {
    let (lr, lc) = matrix_dims(name, l)?;
    let (rr, rc) = matrix_dims(name, r)?;
    let (m, k1) = if tl { (lc, lr) } else { (lr, lc) };
    let (k2, n) = if tr { (rc, rr) } else { (rr, rc) };
    if k1 != k2 {
        return Err(Error::kernel(name, format!("inner dimensions {k1} and {k2} differ ({l} x {r})")));
    }
    ArrayType::matrix(m, n)
}

fn builtin_descriptors() -> Vec<KernelDescriptor> {
    let mut v = vec![
        KernelDescriptor::unary("idOp", |_, a| Ok(a.clone()), |_, t| Ok(t.clone())),
        elementwise_binary("matAdd", |a, b| a + b).assoc_comm(),
        elementwise_binary("matSub", |a, b| a - b),
        elementwise_binary("elemMul", |a, b| a * b).assoc_comm(),
        elementwise_binary("reluGrad", |a, g| if a > 0.0 { g } else { 0.0 }),
        KernelDescriptor::binary(
            "matMul",
            |_, l, r| gemm("matMul", l, r, false, false),
            |_, l, r| gemm_type("matMul", l, r, false, false),
        )
        .distributes(&["matAdd"]),
        KernelDescriptor::binary(
            "matMulTN",
            |_, l, r| gemm("matMulTN", l, r, true, false),
            |_, l, r| gemm_type("matMulTN", l, r, true, false),
        )
        .distributes(&["matAdd"]),
        KernelDescriptor::binary(
            "matMulNT",
            |_, l, r| gemm("matMulNT", l, r, false, true),
            |_, l, r| gemm_type("matMulNT", l, r, false, true),
        )
        .distributes(&["matAdd"]),
        KernelDescriptor::binary(
            "matVecSub",
            |_, l, r| {
                let t = mat_vec_type(l.array_type(), r.array_type())?;
                let c = t.bound()[1];
                let vals = l.values().iter().enumerate().map(|(i, x)| x - r.values()[i % c]).collect();
                DenseArray::new(t, vals)
            },
            |_, l, r| mat_vec_type(l, r),
        ),
        KernelDescriptor::unary(
            "diag",
            |_, a| {
                let t = diag_type(a.array_type())?;
                let n = t.bound()[0];
                DenseArray::new(t, (0..n).map(|i| a.values()[i * n + i]).collect())
            },
            |_, t| diag_type(t),
        )
        .distributes(&["matAdd", "matSub", "elemMul"]),
        KernelDescriptor::unary(
            "rowSum",
            |_, a| {
                let (r, c) = matrix_dims("rowSum", a.array_type())?;
                let vals = (0..r).map(|i| a.values()[i * c..(i + 1) * c].iter().sum()).collect();
                DenseArray::new(ArrayType::vector(r)?, vals)
            },
            |_, t| ArrayType::vector(matrix_dims("rowSum", t)?.0),
        )
        .distributes(&["matAdd"])
        .with_sample(ArrayType::matrix(3, 4).unwrap()),
        KernelDescriptor::unary(
            "transpose",
            |_, a| {
                let (r, c) = matrix_dims("transpose", a.array_type())?;
                let mut vals = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        vals[j * r + i] = a.values()[i * c + j];
                    }
                }
                DenseArray::new(ArrayType::matrix(c, r)?, vals)
            },
            |_, t| {
                let (r, c) = matrix_dims("transpose", t)?;
                ArrayType::matrix(c, r)
            },
        )
        .distributes(&["matAdd", "matSub", "elemMul"]),
        elementwise_unary("relu", |x| if x > 0.0 { x } else { 0.0 }),
        elementwise_unary("sigmoid", |x| 1.0 / (1.0 + (-x).exp())),
        KernelDescriptor::unary(
            "scalarScale",
            |args, a| {
                let alpha = scale_arg(args)?;
                Ok(map_values(a, |x| alpha * x))
            },
            |args, t| {
                scale_arg(args)?;
                Ok(t.clone())
            },
        )
        .distributes(&["matAdd", "matSub"])
        .with_sample_args(&[0.5]),
        KernelDescriptor::builtin("minIndex", KernelKind::KeyAwareAggregator),
    ];
    for name in ["arrayTileOp", "arrayConcatOp", "keyTileOp", "insertDim", "duplicate"] {
        v.push(KernelDescriptor::builtin(name, KernelKind::Structural));
    }
    v
}

fn scale_arg(args: &[f64]) -> Result<f64> {
    match args {
        [a] => Ok(*a),
        _ => Err(Error::kernel("scalarScale", "expects exactly one scalar argument")),
    }
}

fn diag_type(t: &ArrayType) -> Result<ArrayType> {
    let (r, c) = matrix_dims("diag", t)?;
    if r != c {
        return Err(Error::kernel("diag", format!("needs a square block, got {t}")));
    }
    ArrayType::vector(r)
}

fn mat_vec_type(l: &ArrayType, r: &ArrayType) -> Result<ArrayType> {
    let (_, c) = matrix_dims("matVecSub", l)?;
    let ok = match r.bound() {
        [n] => *n == c,
        [1, n] => *n == c,
        _ => false,
    };
    if !ok {
        return Err(Error::kernel("matVecSub", format!("cannot subtract {r} from the rows of {l}")));
    }
    Ok(l.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> DenseArray {
        DenseArray::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn unary_examples() {
        let reg = KernelRegistry::global();
        let a = m(&[&[1., 2.], &[3., 4.]]);
        assert_eq!(reg.apply_unary("diag", &[], &a).unwrap().values(), &[1., 4.]);
        let rs = reg.apply_unary("rowSum", &[], &a).unwrap();
        assert_eq!(rs.values(), &[3., 7.]);
        assert_eq!(rs.array_type().bound(), &[2]);
        assert!(reg.apply_unary("idOp", &[], &a).unwrap().bit_eq(&a));
        assert_eq!(reg.apply_unary("transpose", &[], &a).unwrap().values(), &[1., 3., 2., 4.]);
        assert_eq!(reg.apply_unary("scalarScale", &[0.5], &a).unwrap().values(), &[0.5, 1., 1.5, 2.]);
        assert!(reg.apply_unary("diag", &[], &m(&[&[1., 2., 3.]])).is_err());
    }

    #[test]
    fn binary_examples() {
        let reg = KernelRegistry::global();
        let p = reg.apply_binary("matMul", &[], &m(&[&[5., 6.], &[7., 8.]]), &m(&[&[9., 10.], &[11., 12.]])).unwrap();
        assert_eq!(p.values(), &[111., 122., 151., 166.]);
        let s = reg.apply_binary("matAdd", &[], &m(&[&[1., 2.], &[3., 4.]]), &m(&[&[9., 10.], &[11., 12.]])).unwrap();
        assert_eq!(s.values(), &[10., 12., 14., 16.]);
        let x = m(&[&[1.5, -2.], &[0.25, 4.]]);
        let ones = m(&[&[1., 1.], &[1., 1.]]);
        assert!(reg.apply_binary("elemMul", &[], &x, &ones).unwrap().bit_eq(&x));
        let v = DenseArray::new(ArrayType::matrix(1, 2).unwrap(), vec![1., 2.]).unwrap();
        assert_eq!(reg.apply_binary("matVecSub", &[], &x, &v).unwrap().values(), &[0.5, -4., -0.75, 2.]);
        assert!(reg.apply_binary("matMul", &[], &m(&[&[1., 2., 3.]]), &m(&[&[1., 2.]])).is_err());
        let t = reg.apply_binary("matMulTN", &[], &m(&[&[1., 2.], &[3., 4.]]), &m(&[&[1., 0.], &[0., 1.]])).unwrap();
        assert_eq!(t.values(), &[1., 3., 2., 4.]);
        let t = reg.apply_binary("matMulNT", &[], &m(&[&[1., 2.], &[3., 4.]]), &m(&[&[1., 0.], &[0., 1.]])).unwrap();
        assert_eq!(t.values(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn duplicate_registration_fails() {
        let mut reg = KernelRegistry::builtin();
        let again = elementwise_binary("matMul", |a, b| a * b);
        assert!(matches!(reg.register(again), Err(Error::DuplicateKernel(_))));
    }

    #[test]
    fn declared_flags_hold() {
        let reg = KernelRegistry::global();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for name in reg.names().collect::<Vec<_>>() {
            reg.verify_flags(name, 64, &mut rng).unwrap();
        }
        assert!(reg.distributes("diag", "matAdd"));
        assert!(!reg.distributes("relu", "matAdd"));
    }

    #[test]
    fn false_flags_are_rejected_at_registration() {
        let mut reg = KernelRegistry::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bogus = elementwise_binary("leftMinus", |a, b| a - b).assoc_comm();
        assert!(reg.register_checked(bogus, &mut rng).is_err());
        assert!(!reg.contains("leftMinus"));
        let relu_claim = elementwise_unary("relu2", |x| x.max(0.0)).distributes(&["matAdd"]);
        assert!(reg.register_checked(relu_claim, &mut rng).is_err());
        let ok = elementwise_binary("maxOp", f64::max).assoc_comm();
        reg.register_checked(ok, &mut rng).unwrap();
        assert!(reg.is_assoc_comm("maxOp"));
    }
}
