//! Inspectable key functions and key predicates.
//!
//! Expressions are evaluated over signed 64-bit integers. Division and modulo
//! by zero yield zero so every expression is total. Comparisons and boolean
//! connectives produce `0` or `1`.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::Key;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Const(i64),
    /// Component `i` of the input key.
    Key(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Mod(Box<Expr>, Box<Expr>),
    Eq(Box<Expr>, Box<Expr>),
    Ne(Box<Expr>, Box<Expr>),
    Lt(Box<Expr>, Box<Expr>),
    Le(Box<Expr>, Box<Expr>),
    Gt(Box<Expr>, Box<Expr>),
    Ge(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

use Expr::*;

const BINARY_NAMES: [&str; 13] =
    ["add", "sub", "mul", "div", "mod", "eq", "ne", "lt", "le", "gt", "ge", "and", "or"];

impl Expr {
    pub fn key(i: usize) -> Expr {
        Key(i)
    }

    pub fn c(v: i64) -> Expr {
        Const(v)
    }

    pub fn binary(name: &str, a: Expr, b: Expr) -> Option<Expr> {
        let (a, b) = (Box::new(a), Box::new(b));
        Some(match name {
            "add" => Add(a, b),
            "sub" => Sub(a, b),
            "mul" => Mul(a, b),
            "div" => Div(a, b),
            "mod" => Mod(a, b),
            "eq" => Eq(a, b),
            "ne" => Ne(a, b),
            "lt" => Lt(a, b),
            "le" => Le(a, b),
            "gt" => Gt(a, b),
            "ge" => Ge(a, b),
            "and" => And(a, b),
            "or" => Or(a, b),
            _ => return None,
        })
    }

    fn split(&self) -> Option<(&'static str, &Expr, &Expr)> {
        Some(match self {
            Add(a, b) => ("add", a, b),
            Sub(a, b) => ("sub", a, b),
            Mul(a, b) => ("mul", a, b),
            Div(a, b) => ("div", a, b),
            Mod(a, b) => ("mod", a, b),
            Eq(a, b) => ("eq", a, b),
            Ne(a, b) => ("ne", a, b),
            Lt(a, b) => ("lt", a, b),
            Le(a, b) => ("le", a, b),
            Gt(a, b) => ("gt", a, b),
            Ge(a, b) => ("ge", a, b),
            And(a, b) => ("and", a, b),
            Or(a, b) => ("or", a, b),
            _ => return None,
        })
    }

    pub fn eval(&self, key: &[u64]) -> i64 {
        let b = |x: bool| x as i64;
        match self {
            Const(v) => *v,
            Key(i) => key[*i] as i64,
            Not(a) => b(a.eval(key) == 0),
            _ => {
                let (op, x, y) = self.split().expect("binary node");
                let (x, y) = (x.eval(key), y.eval(key));
                match op {
                    "add" => x.wrapping_add(y),
                    "sub" => x.wrapping_sub(y),
                    "mul" => x.wrapping_mul(y),
                    "div" => {
                        if y == 0 {
                            0
                        } else {
                            x.wrapping_div(y)
                        }
                    }
                    "mod" => {
                        if y == 0 {
                            0
                        } else {
                            x.wrapping_rem(y)
                        }
                    }
                    "eq" => b(x == y),
                    "ne" => b(x != y),
                    "lt" => b(x < y),
                    "le" => b(x <= y),
                    "gt" => b(x > y),
                    "ge" => b(x >= y),
                    "and" => b(x != 0 && y != 0),
                    "or" => b(x != 0 || y != 0),
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Highest key component referenced, if any.
    pub fn max_key(&self) -> Option<usize> {
        match self {
            Const(_) => None,
            Key(i) => Some(*i),
            Not(a) => a.max_key(),
            _ => {
                let (_, a, b) = self.split().unwrap();
                a.max_key().max(b.max_key())
            }
        }
    }

    pub fn keys_used(&self, out: &mut Vec<usize>) {
        match self {
            Const(_) => {}
            Key(i) => {
                if !out.contains(i) {
                    out.push(*i);
                }
            }
            Not(a) => a.keys_used(out),
            _ => {
                let (_, a, b) = self.split().unwrap();
                a.keys_used(out);
                b.keys_used(out);
            }
        }
    }

    /// Replaces every `Key(i)` with `subst[i]`.
    pub fn substitute(&self, subst: &[Expr]) -> Expr {
        match self {
            Const(v) => Const(*v),
            Key(i) => subst[*i].clone(),
            Not(a) => Not(Box::new(a.substitute(subst))),
            _ => {
                let (op, a, b) = self.split().unwrap();
                Expr::binary(op, a.substitute(subst), b.substitute(subst)).unwrap()
            }
        }
    }

    /// Constant folding plus the neutral-element identities `x+0`, `x-0`, `x*1`, `x/1`.
    pub fn simplify(&self) -> Expr {
        match self {
            Const(_) | Key(_) => self.clone(),
            Not(a) => match a.simplify() {
                Const(v) => Const((v == 0) as i64),
                s => Not(Box::new(s)),
            },
            _ => {
                let (op, a, b) = self.split().unwrap();
                let (a, b) = (a.simplify(), b.simplify());
                if let (Const(_), Const(_)) = (&a, &b) {
                    return Const(Expr::binary(op, a, b).unwrap().eval(&[]));
                }
                match (op, &a, &b) {
                    ("add", x, Const(0)) | ("add", Const(0), x) => x.clone(),
                    ("sub", x, Const(0)) => x.clone(),
                    ("mul", x, Const(1)) | ("mul", Const(1), x) => x.clone(),
                    ("div", x, Const(1)) => x.clone(),
                    _ => Expr::binary(op, a, b).unwrap(),
                }
            }
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Const(v) => json!(["const", v]),
            Key(i) => json!(["key", i]),
            Not(a) => json!(["not", a.to_json()]),
            _ => {
                let (op, a, b) = self.split().unwrap();
                json!([op, a.to_json(), b.to_json()])
            }
        }
    }

    pub fn from_json(v: &Value) -> Result<Expr> {
        let bad = || Error::Format(format!("malformed key expression {v}"));
        let arr = v.as_array().ok_or_else(bad)?;
        let head = arr.first().and_then(Value::as_str).ok_or_else(bad)?;
        match (head, arr.len()) {
            ("const", 2) => Ok(Const(arr[1].as_i64().ok_or_else(bad)?)),
            ("key", 2) => Ok(Key(arr[1].as_u64().ok_or_else(bad)? as usize)),
            ("not", 2) => Ok(Not(Box::new(Expr::from_json(&arr[1])?))),
            (op, 3) if BINARY_NAMES.contains(&op) => {
                Ok(Expr::binary(op, Expr::from_json(&arr[1])?, Expr::from_json(&arr[2])?).unwrap())
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Const(v) => write!(f, "{v}"),
            Key(i) => write!(f, "k{i}"),
            Not(a) => write!(f, "!({a})"),
            _ => {
                let (op, a, b) = self.split().unwrap();
                let sym = match op {
                    "add" => "+",
                    "sub" => "-",
                    "mul" => "*",
                    "div" => "/",
                    "mod" => "%",
                    "eq" => "==",
                    "ne" => "!=",
                    "lt" => "<",
                    "le" => "<=",
                    "gt" => ">",
                    "ge" => ">=",
                    "and" => "&&",
                    _ => "||",
                };
                write!(f, "({a} {sym} {b})")
            }
        }
    }
}

/// A key-to-key function producing one output key per input key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KeyFn {
    pub outputs: Vec<Expr>,
}

impl KeyFn {
    pub fn new(outputs: Vec<Expr>) -> Self {
        KeyFn { outputs }
    }

    pub fn identity(arity: usize) -> Self {
        KeyFn { outputs: (0..arity).map(Key).collect() }
    }

    /// Keeps the listed components in order.
    pub fn project(dims: &[usize]) -> Self {
        KeyFn { outputs: dims.iter().map(|&d| Key(d)).collect() }
    }

    pub fn arity(&self) -> usize {
        self.outputs.len()
    }

    /// Symbolic identity test on the simplified AST.
    pub fn is_identity(&self, input_arity: usize) -> bool {
        self.outputs.len() == input_arity
            && self.outputs.iter().enumerate().all(|(i, e)| e.simplify() == Key(i))
    }

    /// For each output position, the input component it copies verbatim, if any.
    pub fn copied_components(&self) -> Vec<Option<usize>> {
        self.outputs
            .iter()
            .map(|e| match e.simplify() {
                Key(i) => Some(i),
                _ => None,
            })
            .collect()
    }

    pub fn input_arity_needed(&self) -> usize {
        self.outputs.iter().filter_map(Expr::max_key).map(|m| m + 1).max().unwrap_or(0)
    }

    pub fn apply(&self, key: &[u64]) -> Result<Key> {
        self.outputs
            .iter()
            .map(|e| {
                let v = e.eval(key);
                u64::try_from(v).map_err(|_| {
                    Error::Shape(format!("key function {self} maps {key:?} to negative component {v}"))
                })
            })
            .collect()
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &KeyFn) -> KeyFn {
        KeyFn { outputs: self.outputs.iter().map(|e| e.substitute(&inner.outputs).simplify()).collect() }
    }

    pub fn to_json(&self) -> Value {
        Value::Array(self.outputs.iter().map(Expr::to_json).collect())
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let arr = v.as_array().ok_or_else(|| Error::Format(format!("key function must be a list: {v}")))?;
        Ok(KeyFn { outputs: arr.iter().map(Expr::from_json).collect::<Result<_>>()? })
    }
}

impl std::fmt::Display for KeyFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.outputs.iter().map(|e| e.to_string()).collect();
        write!(f, "<{}>", parts.join(","))
    }
}

/// A boolean predicate over a key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pred {
    pub expr: Expr,
}

impl Pred {
    pub fn new(expr: Expr) -> Self {
        Pred { expr }
    }

    pub fn always(value: bool) -> Self {
        Pred { expr: Const(value as i64) }
    }

    /// `k0 == k1`.
    pub fn is_eq() -> Self {
        Pred { expr: Eq(Box::new(Key(0)), Box::new(Key(1))) }
    }

    pub fn test(&self, key: &[u64]) -> bool {
        self.expr.eval(key) != 0
    }

    pub fn and(&self, other: &Pred) -> Pred {
        Pred { expr: And(Box::new(self.expr.clone()), Box::new(other.expr.clone())) }
    }

    pub fn keys_used(&self) -> Vec<usize> {
        let mut v = Vec::new();
        self.expr.keys_used(&mut v);
        v.sort_unstable();
        v
    }

    /// Evaluates the predicate on `f(key)` instead of `key`.
    pub fn after(&self, f: &KeyFn) -> Pred {
        Pred { expr: self.expr.substitute(&f.outputs).simplify() }
    }

    pub fn to_json(&self) -> Value {
        self.expr.to_json()
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        Ok(Pred { expr: Expr::from_json(v)? })
    }
}

impl std::fmt::Display for Pred {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.expr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rekey_two_by_eight() {
        let f = KeyFn::new(vec![Expr::binary("add", Expr::binary("mul", Const(2), Key(0)).unwrap(), Key(1)).unwrap()]);
        assert_eq!(f.apply(&[0, 0]).unwrap(), vec![0]);
        assert_eq!(f.apply(&[0, 1]).unwrap(), vec![1]);
        assert_eq!(f.apply(&[1, 0]).unwrap(), vec![2]);
        assert_eq!(f.apply(&[1, 1]).unwrap(), vec![3]);
    }

    #[test]
    fn identity_is_decided_symbolically() {
        assert!(KeyFn::identity(3).is_identity(3));
        assert!(!KeyFn::identity(3).is_identity(2));
        let padded = KeyFn::new(vec![
            Expr::binary("add", Key(0), Const(0)).unwrap(),
            Expr::binary("mul", Const(1), Key(1)).unwrap(),
        ]);
        assert!(padded.is_identity(2));
        assert!(!KeyFn::project(&[1, 0]).is_identity(2));
        assert!(!KeyFn::project(&[0]).is_identity(2));
    }

    #[test]
    fn division_by_zero_is_total() {
        let e = Expr::binary("div", Key(0), Const(0)).unwrap();
        assert_eq!(e.eval(&[7]), 0);
        let m = Expr::binary("mod", Key(0), Const(0)).unwrap();
        assert_eq!(m.eval(&[7]), 0);
    }

    #[test]
    fn negative_outputs_are_rejected() {
        let f = KeyFn::new(vec![Expr::binary("sub", Key(0), Const(1)).unwrap()]);
        assert!(f.apply(&[0]).is_err());
        assert_eq!(f.apply(&[3]).unwrap(), vec![2]);
    }

    #[test]
    fn composition_and_predicates() {
        let merge = KeyFn::project(&[0]);
        let swap = KeyFn::project(&[1, 0]);
        assert_eq!(merge.compose(&swap).apply(&[4, 9]).unwrap(), vec![9]);
        assert!(swap.compose(&swap).is_identity(2));
        let p = Pred::is_eq();
        assert!(p.test(&[2, 2]));
        assert!(!p.test(&[2, 3]));
        assert!(p.after(&swap).test(&[5, 5]));
        assert!(Pred::always(true).test(&[]));
        assert_eq!(p.keys_used(), vec![0, 1]);
    }

    #[test]
    fn json_round_trip() {
        let e = Not(Box::new(
            Expr::binary("or", Expr::binary("lt", Key(0), Const(3)).unwrap(), Expr::binary("mod", Key(2), Const(-4)).unwrap())
                .unwrap(),
        ));
        let back = Expr::from_json(&e.to_json()).unwrap();
        assert_eq!(back, e);
        assert!(Expr::from_json(&json!(["pow", ["key", 0], ["const", 1]])).is_err());
    }
}
