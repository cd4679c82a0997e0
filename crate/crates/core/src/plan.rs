//! Physical plans: DAGs of implementation-algebra operators.
//!
//! Nodes are shared by pointer, so a broadcast feeding two joins is one node
//! and is charged once. Node ids are positions in a deterministic post-order.

use std::collections::HashMap;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::ia::{fnv1a64, Placement};
use crate::keyexpr::{KeyFn, Pred};
use crate::model::{join_usize, ArrayType};
use crate::ops::{dims_field, field, Aggregator, ArrayMap, Combine, KeyMap};

#[derive(Debug, Clone, PartialEq)]
pub enum IaOp {
    Source { name: String },
    Bcast,
    Shuf { dims: Vec<usize> },
    /// Local join. `out_map`, when present, rewrites each output key; it is
    /// how a key map fused into the join is represented.
    Join { keys_l: Vec<usize>, keys_r: Vec<usize>, proj: Combine, out_map: Option<KeyFn> },
    Agg { group_by: Vec<usize>, agg: Aggregator },
    Filter { pred: Pred },
    Map { key_map: KeyMap, array_map: ArrayMap },
}

impl IaOp {
    pub fn name(&self) -> &'static str {
        match self {
            IaOp::Source { .. } => "source",
            IaOp::Bcast => "bcast",
            IaOp::Shuf { .. } => "shuf",
            IaOp::Join { .. } => "join",
            IaOp::Agg { .. } => "agg",
            IaOp::Filter { .. } => "filter",
            IaOp::Map { .. } => "map",
        }
    }

    pub fn input_count(&self) -> usize {
        match self {
            IaOp::Source { .. } => 0,
            IaOp::Join { .. } => 2,
            _ => 1,
        }
    }

    pub fn is_movement(&self) -> bool {
        matches!(self, IaOp::Bcast | IaOp::Shuf { .. })
    }

    pub fn label(&self) -> String {
        let d = |v: &[usize]| format!("<{}>", join_usize(v));
        match self {
            IaOp::Source { name } => format!("Source({name})"),
            IaOp::Bcast => "Bcast".into(),
            IaOp::Shuf { dims } => format!("Shuf{}", d(dims)),
            IaOp::Join { keys_l, keys_r, proj, out_map } => match out_map {
                None => format!("JoinL({},{},{proj})", d(keys_l), d(keys_r)),
                Some(f) => format!("JoinL({},{},{proj},out={f})", d(keys_l), d(keys_r)),
            },
            IaOp::Agg { group_by, agg } => format!("AggL({},{agg})", d(group_by)),
            IaOp::Filter { pred } => format!("FilterL({pred})"),
            IaOp::Map { key_map, array_map } => format!("MapL({key_map},{array_map})"),
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = match self {
            IaOp::Source { name } => json!({ "name": name }),
            IaOp::Bcast => json!({}),
            IaOp::Shuf { dims } => json!({ "dims": dims }),
            IaOp::Join { keys_l, keys_r, proj, out_map } => {
                let mut j = json!({"joinKeysL": keys_l, "joinKeysR": keys_r, "proj": proj.to_json()});
                if let Some(f) = out_map {
                    j["outMap"] = f.to_json();
                }
                j
            }
            IaOp::Agg { group_by, agg } => json!({"groupBy": group_by, "agg": agg.to_json()}),
            IaOp::Filter { pred } => json!({ "boolFunc": pred.to_json() }),
            IaOp::Map { key_map, array_map } => json!({"keyMap": key_map.to_json(), "arrayMap": array_map.to_json()}),
        };
        v["op"] = json!(self.name());
        v
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let op = v.get("op").and_then(Value::as_str).ok_or_else(|| Error::Format(format!("plan node without op: {v}")))?;
        Ok(match op {
            "source" => IaOp::Source {
                name: field(v, "name")?.as_str().ok_or_else(|| Error::Format("source name must be a string".into()))?.into(),
            },
            "bcast" => IaOp::Bcast,
            "shuf" => IaOp::Shuf { dims: dims_field(v, "dims")? },
            "join" => IaOp::Join {
                keys_l: dims_field(v, "joinKeysL")?,
                keys_r: dims_field(v, "joinKeysR")?,
                proj: Combine::from_json(field(v, "proj")?)?,
                out_map: v.get("outMap").map(KeyFn::from_json).transpose()?,
            },
            "agg" => IaOp::Agg { group_by: dims_field(v, "groupBy")?, agg: Aggregator::from_json(field(v, "agg")?)? },
            "filter" => IaOp::Filter { pred: Pred::from_json(field(v, "boolFunc")?)? },
            "map" => IaOp::Map {
                key_map: KeyMap::from_json(field(v, "keyMap")?)?,
                array_map: ArrayMap::from_json(field(v, "arrayMap")?)?,
            },
            other => return Err(Error::Format(format!("unknown plan op `{other}`"))),
        })
    }
}

#[derive(Debug)]
pub struct PlanNode {
    pub op: IaOp,
    pub inputs: Vec<NodeRef>,
}

pub type NodeRef = Arc<PlanNode>;

pub fn node(op: IaOp, inputs: Vec<NodeRef>) -> NodeRef {
    Arc::new(PlanNode { op, inputs })
}

pub fn source(name: &str) -> NodeRef {
    node(IaOp::Source { name: name.into() }, vec![])
}

pub fn bcast(x: NodeRef) -> NodeRef {
    node(IaOp::Bcast, vec![x])
}

pub fn shuf(dims: &[usize], x: NodeRef) -> NodeRef {
    node(IaOp::Shuf { dims: dims.to_vec() }, vec![x])
}

pub fn join(keys_l: &[usize], keys_r: &[usize], proj: Combine, l: NodeRef, r: NodeRef) -> NodeRef {
    node(IaOp::Join { keys_l: keys_l.to_vec(), keys_r: keys_r.to_vec(), proj, out_map: None }, vec![l, r])
}

pub fn agg(group_by: &[usize], a: Aggregator, x: NodeRef) -> NodeRef {
    node(IaOp::Agg { group_by: group_by.to_vec(), agg: a }, vec![x])
}

pub fn filter(pred: Pred, x: NodeRef) -> NodeRef {
    node(IaOp::Filter { pred }, vec![x])
}

pub fn map(key_map: KeyMap, array_map: ArrayMap, x: NodeRef) -> NodeRef {
    node(IaOp::Map { key_map, array_map }, vec![x])
}

fn ptr(n: &NodeRef) -> *const PlanNode {
    Arc::as_ptr(n)
}

/// A plan with one or more result nodes.
#[derive(Debug, Clone)]
pub struct IaPlan {
    pub roots: Vec<NodeRef>,
}

impl IaPlan {
    pub fn new(root: NodeRef) -> Self {
        IaPlan { roots: vec![root] }
    }

    pub fn with_roots(roots: Vec<NodeRef>) -> Self {
        IaPlan { roots }
    }

    /// Distinct nodes in post-order (inputs before consumers).
    pub fn nodes(&self) -> Vec<NodeRef> {
        fn visit(n: &NodeRef, seen: &mut HashMap<*const PlanNode, usize>, out: &mut Vec<NodeRef>) {
            if seen.contains_key(&ptr(n)) {
                return;
            }
            for i in &n.inputs {
                visit(i, seen, out);
            }
            seen.insert(ptr(n), out.len());
            out.push(n.clone());
        }
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for r in &self.roots {
            visit(r, &mut seen, &mut out);
        }
        out
    }

    /// Node list plus, per node, the ids of its inputs; and the root ids.
    pub fn indexed(&self) -> (Vec<NodeRef>, Vec<Vec<usize>>, Vec<usize>) {
        let nodes = self.nodes();
        let ids: HashMap<*const PlanNode, usize> = nodes.iter().enumerate().map(|(i, n)| (ptr(n), i)).collect();
        let inputs = nodes.iter().map(|n| n.inputs.iter().map(|i| ids[&ptr(i)]).collect()).collect();
        let roots = self.roots.iter().map(|r| ids[&ptr(r)]).collect();
        (nodes, inputs, roots)
    }

    pub fn node_count(&self) -> usize {
        self.nodes().len()
    }

    pub fn node_at(&self, id: usize) -> Option<NodeRef> {
        self.nodes().get(id).cloned()
    }

    /// Rebuilds the plan with node `id` replaced everywhere it is referenced.
    pub fn replace(&self, id: usize, replacement: NodeRef) -> IaPlan {
        let target = match self.node_at(id) {
            Some(t) => ptr(&t),
            None => return self.clone(),
        };
        fn rebuild(
            n: &NodeRef,
            target: *const PlanNode,
            replacement: &NodeRef,
            memo: &mut HashMap<*const PlanNode, NodeRef>,
        ) -> NodeRef {
            if ptr(n) == target {
                return replacement.clone();
            }
            if let Some(done) = memo.get(&ptr(n)) {
                return done.clone();
            }
            let inputs: Vec<NodeRef> = n.inputs.iter().map(|i| rebuild(i, target, replacement, memo)).collect();
            let out = if inputs.iter().zip(&n.inputs).all(|(a, b)| Arc::ptr_eq(a, b)) {
                n.clone()
            } else {
                node(n.op.clone(), inputs)
            };
            memo.insert(ptr(n), out.clone());
            out
        }
        let mut memo = HashMap::new();
        IaPlan { roots: self.roots.iter().map(|r| rebuild(r, target, &replacement, &mut memo)).collect() }
    }

    /// One line per node in id order: `id label <- inputs`. Equal texts mean
    /// structurally identical plans including sharing.
    pub fn canonical_text(&self) -> String {
        let (nodes, inputs, roots) = self.indexed();
        let mut s = String::new();
        for (i, n) in nodes.iter().enumerate() {
            s.push_str(&format!("{i} {} <- {}\n", canonical_op(&n.op), join_usize(&inputs[i])));
        }
        s.push_str(&format!("roots {}\n", join_usize(&roots)));
        s
    }

    pub fn canonical_hash(&self) -> u64 {
        fnv1a64(self.canonical_text().into_bytes())
    }

    pub fn to_json(&self) -> Value {
        let (nodes, inputs, roots) = self.indexed();
        let list: Vec<Value> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let mut v = n.op.to_json();
                v["id"] = json!(i);
                if !inputs[i].is_empty() {
                    v["inputs"] = json!(inputs[i]);
                }
                v
            })
            .collect();
        json!({ "nodes": list, "roots": roots })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let list = field(v, "nodes")?.as_array().ok_or_else(|| Error::Format("plan nodes must be a list".into()))?;
        let mut built: Vec<NodeRef> = Vec::with_capacity(list.len());
        for (i, nv) in list.iter().enumerate() {
            if let Some(id) = nv.get("id").and_then(Value::as_u64) {
                if id as usize != i {
                    return Err(Error::Format(format!("plan node ids must be 0..n in order; found {id} at {i}")));
                }
            }
            let op = IaOp::from_json(nv)?;
            let ins = match nv.get("inputs") {
                None => Vec::new(),
                Some(x) => crate::ops::dims_from_json(x)?,
            };
            if ins.len() != op.input_count() {
                return Err(Error::Format(format!("node {i} ({}) needs {} inputs", op.name(), op.input_count())));
            }
            let mut inputs = Vec::new();
            for j in ins {
                inputs.push(built.get(j).cloned().ok_or_else(|| {
                    Error::Format(format!("node {i} refers to node {j}, which is not defined before it"))
                })?);
            }
            built.push(node(op, inputs));
        }
        let roots = crate::ops::dims_field(v, "roots")?
            .into_iter()
            .map(|r| built.get(r).cloned().ok_or_else(|| Error::Format(format!("unknown root {r}"))))
            .collect::<Result<Vec<_>>>()?;
        if roots.is_empty() {
            return Err(Error::Format("plan has no roots".into()));
        }
        Ok(IaPlan { roots })
    }

    /// Indented tree, one node per line, shared nodes printed once.
    pub fn explain(&self, notes: Option<&[String]>) -> String {
        let (nodes, inputs, roots) = self.indexed();
        let mut out = String::new();
        let mut printed = vec![false; nodes.len()];
        fn go(
            id: usize,
            depth: usize,
            nodes: &[NodeRef],
            inputs: &[Vec<usize>],
            notes: Option<&[String]>,
            printed: &mut [bool],
            out: &mut String,
        ) {
            let pad = "  ".repeat(depth);
            if printed[id] {
                out.push_str(&format!("{pad}#{id} (shared, see above)\n"));
                return;
            }
            printed[id] = true;
            let note = notes.and_then(|n| n.get(id)).map(|s| format!("  [{s}]")).unwrap_or_default();
            out.push_str(&format!("{pad}#{id} {}{note}\n", nodes[id].op.label()));
            for &c in &inputs[id] {
                go(c, depth + 1, nodes, inputs, notes, printed, out);
            }
        }
        for r in roots {
            go(r, 0, &nodes, &inputs, notes, &mut printed, &mut out);
        }
        out
    }
}

fn canonical_op(op: &IaOp) -> String {
    op.to_json().to_string()
}

/// How per-site partial results of an aggregation must be merged.
#[derive(Debug, Clone, PartialEq)]
pub enum Merge {
    Binary(crate::ops::KernelCall),
    MinIndex,
}

/// Static facts about the relation a node produces.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInfo {
    pub key_arity: usize,
    pub array_type: ArrayType,
    pub placement: Placement,
    /// Set when the same key may appear on several sites as partial results.
    pub partial: Option<Merge>,
}

impl std::fmt::Display for NodeInfo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "arity {} type {} {}", self.key_arity, self.array_type, self.placement)?;
        if self.partial.is_some() {
            write!(f, " partial")?;
        }
        Ok(())
    }
}

/// A validated plan flattened for execution.
#[derive(Debug, Clone)]
pub struct ExecPlan {
    pub sites: usize,
    pub nodes: Vec<ExecNode>,
    pub roots: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ExecNode {
    pub op: IaOp,
    pub inputs: Vec<usize>,
    pub key_arity: usize,
    pub array_type: ArrayType,
    /// Input of a movement node is replicated on every site.
    pub replicated_input: bool,
}

impl ExecPlan {
    pub fn to_json(&self) -> Value {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .map(|n| {
                let mut v = n.op.to_json();
                v["inputs"] = json!(n.inputs);
                v["keyArity"] = json!(n.key_arity);
                v["bound"] = json!(n.array_type.bound());
                v["replicatedInput"] = json!(n.replicated_input);
                v
            })
            .collect();
        json!({"sites": self.sites, "nodes": nodes, "roots": self.roots})
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let sites = crate::ops::usize_field(v, "sites")?;
        let list = field(v, "nodes")?.as_array().ok_or_else(|| Error::Format("nodes must be a list".into()))?;
        let nodes = list
            .iter()
            .map(|n| {
                Ok(ExecNode {
                    op: IaOp::from_json(n)?,
                    inputs: dims_field(n, "inputs")?,
                    key_arity: crate::ops::usize_field(n, "keyArity")?,
                    array_type: ArrayType::new(dims_field(n, "bound")?)?,
                    replicated_input: n.get("replicatedInput").and_then(Value::as_bool).unwrap_or(false),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExecPlan { sites, nodes, roots: dims_field(v, "roots")? })
    }
}
