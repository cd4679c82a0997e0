//! Transfer cost of IA plans, computed from shapes alone.
//!
//! Costing runs the plan over array types instead of arrays, so tuple counts
//! and frontiers are exact. Movement nodes are charged by rule: a broadcast
//! moves its logical floats to every site, a shuffle moves every resident
//! float (replicated partials and self-sends included).

use crate::compiler::prepare;
use crate::error::Result;
use crate::ia::{execute_reference, symbolic_source, PhysicalRelation};
use crate::kernels::KernelRegistry;
use crate::model::{join_u64, ArrayType, Key, KeyGrid};
use crate::plan::{IaOp, IaPlan};
use crate::tra::{project, Catalog};

#[derive(Debug, Clone, PartialEq)]
pub struct NodeCost {
    pub id: usize,
    pub op: String,
    pub key_arity: usize,
    pub bound: Vec<usize>,
    pub frontier: Key,
    /// Tuples resident across all sites.
    pub tuples: u64,
    pub floats: u64,
    pub transfer: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub sites: usize,
    pub nodes: Vec<NodeCost>,
    pub total: u64,
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,operator,key_arity,bound,frontier,tuples,floats,transfer\n");
        for n in &self.nodes {
            s.push_str(&format!(
                "{},\"{}\",{},{},{},{},{},{}\n",
                n.id,
                n.op.replace('"', "'"),
                n.key_arity,
                dims_text(&n.bound),
                dims_text(&n.frontier),
                n.tuples,
                n.floats,
                n.transfer
            ));
        }
        s.push_str(&format!("total,,,,,,,{}\n", self.total));
        s
    }

    /// Per-node transfers, indexed by node id.
    pub fn transfers(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.transfer).collect()
    }
}

fn dims_text<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join("x")
}

/// Floats held once per distinct tuple: one site's copy when replicated.
fn logical_floats(rel: &PhysicalRelation<ArrayType>, replicated: bool) -> u64 {
    if replicated {
        rel.sites.first().map_or(0, |t| t.len() as u64) * rel.array_type.floats()
    } else {
        rel.physical_floats()
    }
}

pub fn cost_plan(plan: &IaPlan, catalog: &Catalog, reg: &KernelRegistry, sites: usize) -> Result<CostReport> {
    let exec = prepare(plan, catalog, reg, sites)?;
    let run = execute_reference(&exec, reg, &symbolic_source(catalog, sites))?;
    let mut nodes = Vec::with_capacity(exec.nodes.len());
    for (id, n) in exec.nodes.iter().enumerate() {
        let out = &run.outputs[id];
        let transfer = match &n.op {
            IaOp::Bcast => logical_floats(&run.outputs[n.inputs[0]], n.replicated_input) * sites as u64,
            IaOp::Shuf { .. } => run.outputs[n.inputs[0]].physical_floats(),
            _ => 0,
        };
        nodes.push(NodeCost {
            id,
            op: n.op.label(),
            key_arity: n.key_arity,
            bound: n.array_type.bound().to_vec(),
            frontier: out.frontier(),
            tuples: out.tuple_count() as u64,
            floats: out.physical_floats(),
            transfer,
        });
    }
    let total = nodes.iter().map(|n| n.transfer).sum();
    Ok(CostReport { sites, nodes, total })
}

/// Transfer the symbolic exchange itself measured, for cross-checking the rules.
pub fn simulated_transfers(plan: &IaPlan, catalog: &Catalog, reg: &KernelRegistry, sites: usize) -> Result<Vec<u64>> {
    let exec = prepare(plan, catalog, reg, sites)?;
    Ok(execute_reference(&exec, reg, &symbolic_source(catalog, sites))?.transfers)
}

fn grid_max(arity: usize, keys: impl Iterator<Item = Key>) -> Key {
    let mut f = vec![0u64; arity];
    for k in keys {
        for (a, b) in f.iter_mut().zip(&k) {
            *a = (*a).max(b + 1);
        }
    }
    f
}

/// Frontier of every node derived bottom-up from child frontiers only: joins
/// take the smaller side on join dims, aggregations project, filters and maps
/// enumerate the key grid below the child frontier. Exact when every node's
/// keys fill their frontier grid.
pub fn infer_frontiers(plan: &IaPlan, catalog: &Catalog) -> Result<Vec<Key>> {
    let (nodes, inputs, _) = plan.indexed();
    let mut out: Vec<Key> = Vec::with_capacity(nodes.len());
    for (id, n) in nodes.iter().enumerate() {
        let child = |i: usize| &out[inputs[id][i]];
        let f = match &n.op {
            IaOp::Source { name } => catalog.get(name)?.frontier.clone(),
            IaOp::Bcast | IaOp::Shuf { .. } => child(0).clone(),
            IaOp::Join { keys_l, keys_r, out_map, .. } => {
                let (l, r) = (child(0), child(1));
                let mut joined = l.clone();
                for (u, &d) in keys_l.iter().enumerate() {
                    joined[d] = l[d].min(r[keys_r[u]]);
                }
                let right_rest: Vec<u64> =
                    r.iter().enumerate().filter(|(i, _)| !keys_r.contains(i)).map(|(_, v)| *v).collect();
                joined.extend(right_rest);
                match out_map {
                    None => joined,
                    Some(m) => {
                        let keys = KeyGrid::new(&joined).map(|k| m.apply(&k)).collect::<Result<Vec<_>>>()?;
                        grid_max(m.arity(), keys.into_iter())
                    }
                }
            }
            IaOp::Agg { group_by, .. } => {
                let c = child(0);
                if c.contains(&0) {
                    vec![0; group_by.len()]
                } else {
                    project(c, group_by)
                }
            }
            IaOp::Filter { pred } => {
                let c = child(0);
                grid_max(c.len(), KeyGrid::new(c).filter(|k| pred.test(k)))
            }
            IaOp::Map { key_map, .. } => {
                let c = child(0);
                let arity = key_map.out_key_arity(c.len())?;
                let mut keys = Vec::new();
                for k in KeyGrid::new(c) {
                    keys.extend(key_map.apply(&k)?);
                }
                grid_max(arity, keys.into_iter())
            }
        };
        out.push(f);
    }
    Ok(out)
}

/// Cost table rows: label, plan, report.
pub fn cost_table(rows: &[(String, u64)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (l, c) in rows {
        s.push_str(&format!("{l:<width$}  {c:>16}  {}\n", sci(*c)));
    }
    s
}

/// `1.6e10`-style rendering with two significant figures.
pub fn sci(v: u64) -> String {
    if v == 0 {
        return "0".into();
    }
    let exp = (v as f64).log10().floor() as i32;
    let mut mant = v as f64 / 10f64.powi(exp);
    mant = (mant * 10.0).round() / 10.0;
    let (mant, exp) = if mant >= 10.0 { (mant / 10.0, exp + 1) } else { (mant, exp) };
    format!("{mant:.1}e{exp}")
}

pub fn frontier_text(f: &[u64]) -> String {
    format!("<{}>", join_u64(f))
}
