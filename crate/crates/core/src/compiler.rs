//! TRA to IA translation and static typing of IA plans.
//!
//! Validation tracks where tuples live (`Placement`) and whether a node holds
//! per-site partial aggregates. A plan is valid at `s` sites when every local
//! operator sees its inputs arranged so the result equals the logical one.

use crate::error::{Error, Result};
use crate::ia::{sorted_dims, Placement};
use crate::kernels::KernelRegistry;
use crate::keyexpr::KeyFn;
use crate::ops::{Aggregator, ArrayMap, Combine, KernelCall, KeyMap};
use crate::plan::{self, ExecNode, ExecPlan, IaOp, IaPlan, Merge, NodeInfo, NodeRef};
use crate::tra::{check_group_by, check_join_keys, eval_symbolic, Catalog, TraExpr};

/// Structural translation of a logical expression into its initial plan.
pub fn compile(expr: &TraExpr, catalog: &Catalog, reg: &KernelRegistry) -> Result<IaPlan> {
    eval_symbolic(expr, catalog, reg)?;
    Ok(IaPlan::new(lower(expr, catalog, reg)?))
}

fn lower(expr: &TraExpr, catalog: &Catalog, reg: &KernelRegistry) -> Result<NodeRef> {
    Ok(match expr {
        TraExpr::Source(name) => {
            catalog.get(name)?;
            plan::source(name)
        }
        TraExpr::Aggregate { group_by, agg, input } => {
            plan::agg(group_by, agg.clone(), plan::shuf(group_by, lower(input, catalog, reg)?))
        }
        TraExpr::Join { keys_l, keys_r, proj, left, right } => plan::join(
            keys_l,
            keys_r,
            proj.clone(),
            plan::bcast(lower(left, catalog, reg)?),
            lower(right, catalog, reg)?,
        ),
        TraExpr::ReKey { f, input } => plan::map(KeyMap::Func(f.clone()), ArrayMap::identity(), lower(input, catalog, reg)?),
        TraExpr::Filter { pred, input } => plan::filter(pred.clone(), lower(input, catalog, reg)?),
        TraExpr::Transform { kernel, input } => {
            let child = eval_symbolic(input, catalog, reg)?;
            plan::map(
                KeyMap::identity(child.key_arity),
                ArrayMap::Chain(vec![kernel.clone()]),
                lower(input, catalog, reg)?,
            )
        }
        TraExpr::Tile { dim, size, input } => {
            let child = eval_symbolic(input, catalog, reg)?;
            let count = child.array_type.bound()[*dim] / size;
            plan::map(KeyMap::Tile { count }, ArrayMap::Tile { dim: *dim, size: *size }, lower(input, catalog, reg)?)
        }
        TraExpr::Concat { key_dim, array_dim, input } => {
            let child = eval_symbolic(input, catalog, reg)?;
            let count = child.frontier()[*key_dim] as usize;
            let rest: Vec<usize> = (0..child.key_arity).filter(|d| d != key_dim).collect();
            let agg = Aggregator::Concat { key_dim: *key_dim, array_dim: *array_dim, count };
            plan::agg(&rest, agg, plan::shuf(&rest, lower(input, catalog, reg)?))
        }
    })
}

/// Infers key arity, array type, placement and partial state for every node
/// (indexed by post-order id), rejecting plans that are not correct at `sites`.
pub fn type_and_validate(plan: &IaPlan, catalog: &Catalog, reg: &KernelRegistry, sites: usize) -> Result<Vec<NodeInfo>> {
    if sites == 0 {
        return Err(Error::validation("plan", "site count must be at least 1"));
    }
    let (nodes, inputs, roots) = plan.indexed();
    let mut infos: Vec<NodeInfo> = Vec::with_capacity(nodes.len());
    for (id, n) in nodes.iter().enumerate() {
        let path = format!("node #{id} {}", n.op.label());
        let ins: Vec<&NodeInfo> = inputs[id].iter().map(|&i| &infos[i]).collect();
        let info = infer(&path, &n.op, &ins, catalog, reg, sites)?;
        infos.push(info);
    }
    for r in roots {
        if infos[r].partial.is_some() {
            return Err(Error::validation(
                format!("node #{r} {}", nodes[r].op.label()),
                "plan result holds unmerged per-site partial aggregates",
            ));
        }
    }
    Ok(infos)
}

fn infer(path: &str, op: &IaOp, ins: &[&NodeInfo], catalog: &Catalog, reg: &KernelRegistry, sites: usize) -> Result<NodeInfo> {
    let strict = sites > 1;
    let bad = |msg: &str| Error::validation(path, msg);
    match op {
        IaOp::Source { name } => {
            let src = catalog.get(name)?;
            Ok(NodeInfo {
                key_arity: src.key_arity,
                array_type: src.array_type.clone(),
                placement: src.partition.placement(),
                partial: None,
            })
        }
        IaOp::Bcast => {
            let x = ins[0];
            if strict && x.partial.is_some() {
                return Err(bad("broadcast of unmerged partial aggregates"));
            }
            Ok(NodeInfo { placement: Placement::All, partial: None, ..x.clone() })
        }
        IaOp::Shuf { dims } => {
            let x = ins[0];
            check_group_by(path, dims, x.key_arity)?;
            Ok(NodeInfo { placement: Placement::Part(sorted_dims(dims)), ..x.clone() })
        }
        IaOp::Join { keys_l, keys_r, proj, out_map } => {
            let (l, r) = (ins[0], ins[1]);
            check_join_keys(path, keys_l, keys_r, l.key_arity, r.key_arity)?;
            if strict && (l.partial.is_some() || r.partial.is_some()) {
                return Err(bad("join input holds unmerged partial aggregates"));
            }
            let array_type = proj.apply(reg, &l.array_type, &r.array_type)?;
            let arity = l.key_arity + r.key_arity - keys_l.len();
            let placed = join_placement(&l.placement, &r.placement, keys_l, keys_r, l.key_arity);
            let placement = match placed {
                Some(p) => p,
                None if strict => {
                    return Err(bad(&format!(
                        "inputs placed {} and {} are neither replicated nor co-partitioned on the join keys",
                        l.placement, r.placement
                    )))
                }
                None => Placement::Spread,
            };
            let (key_arity, placement) = match out_map {
                None => (arity, placement),
                Some(f) => {
                    if f.input_arity_needed() > arity {
                        return Err(bad(&format!("output key map {f} reads past join arity {arity}")));
                    }
                    (f.arity(), remap_placement(&placement, &f.copied_components()))
                }
            };
            Ok(NodeInfo { key_arity, array_type, placement, partial: None })
        }
        IaOp::Agg { group_by, agg } => {
            let x = ins[0];
            check_group_by(path, group_by, x.key_arity)?;
            agg.validate(reg, x.key_arity, group_by)?;
            let array_type = agg.out_type(reg, &x.array_type)?;
            let key_arity = group_by.len();
            let covered = |d: &[usize]| d.iter().all(|x| group_by.contains(x));
            let remapped = |d: &[usize]| {
                Placement::Part(d.iter().map(|x| group_by.iter().position(|g| g == x).unwrap()).collect())
            };
            if !strict {
                let placement = match &x.placement {
                    Placement::All => Placement::All,
                    Placement::Part(d) if covered(d) => remapped(d),
                    _ => Placement::Spread,
                };
                return Ok(NodeInfo { key_arity, array_type, placement, partial: None });
            }
            if let Some(m) = &x.partial {
                match &x.placement {
                    Placement::Part(d) if covered(d) => {}
                    _ => return Err(bad("partial aggregates are not co-located by the group-by keys")),
                }
                if !merges(agg, m) {
                    return Err(bad(&format!("aggregator {agg} cannot merge the partial aggregates below it")));
                }
            }
            let (placement, partial) = match &x.placement {
                Placement::All => (Placement::All, None),
                Placement::Part(d) if covered(d) => (remapped(d), None),
                _ => match split_merge(agg) {
                    Some(m) => (Placement::Spread, Some(m)),
                    None => {
                        return Err(bad(&format!(
                            "input placed {} is not partitioned by the group-by keys and {agg} cannot be split",
                            x.placement
                        )))
                    }
                },
            };
            Ok(NodeInfo { key_arity, array_type, placement, partial })
        }
        IaOp::Filter { pred } => {
            let x = ins[0];
            if pred.keys_used().iter().any(|&d| d >= x.key_arity) {
                return Err(bad(&format!("predicate {pred} reads past key arity {}", x.key_arity)));
            }
            Ok(x.clone())
        }
        IaOp::Map { key_map, array_map } => {
            let x = ins[0];
            if strict && x.partial.is_some() {
                return Err(bad("map over unmerged partial aggregates"));
            }
            let key_arity = key_map.out_key_arity(x.key_arity)?;
            let m = array_map.arity(&x.array_type)?;
            if m != key_map.arity() {
                return Err(bad(&format!("key map yields {} outputs but array map yields {m}", key_map.arity())));
            }
            let array_type = array_map.out_type(reg, &x.array_type)?;
            let placement = remap_placement(&x.placement, &key_map.copied_components(x.key_arity));
            Ok(NodeInfo { key_arity, array_type, placement, partial: None })
        }
    }
}

/// Placement of a same-site join, or `None` when the join would miss pairs.
pub fn join_placement(
    l: &Placement,
    r: &Placement,
    keys_l: &[usize],
    keys_r: &[usize],
    arity_l: usize,
) -> Option<Placement> {
    match (l, r) {
        (Placement::All, Placement::All) => Some(Placement::All),
        (Placement::All, Placement::Part(dr)) => {
            let map = |d: usize| match keys_r.iter().position(|&k| k == d) {
                Some(u) => keys_l[u],
                None => arity_l + (0..d).filter(|x| !keys_r.contains(x)).count(),
            };
            Some(Placement::Part(dr.iter().map(|&d| map(d)).collect()))
        }
        (Placement::All, Placement::Spread) | (Placement::Spread, Placement::All) => Some(Placement::Spread),
        (Placement::Part(dl), Placement::All) => Some(Placement::Part(dl.clone())),
        (Placement::Part(dl), Placement::Part(dr)) if co_partitioned(dl, dr, keys_l, keys_r) => {
            Some(Placement::Part(dl.clone()))
        }
        _ => None,
    }
}

/// Both sides hash the same join-key values in the same order.
pub fn co_partitioned(dl: &[usize], dr: &[usize], keys_l: &[usize], keys_r: &[usize]) -> bool {
    dl.len() == dr.len()
        && dl.iter().zip(dr).all(|(a, b)| keys_l.iter().zip(keys_r).any(|(x, y)| x == a && y == b))
}

/// Carries a placement through a key map; lost hash dims degrade to `Spread`.
pub fn remap_placement(p: &Placement, copied: &[Option<usize>]) -> Placement {
    match p {
        Placement::Part(d) => {
            let mapped: Option<Vec<usize>> =
                d.iter().map(|x| copied.iter().position(|c| *c == Some(*x))).collect();
            mapped.map(Placement::Part).unwrap_or(Placement::Spread)
        }
        other => other.clone(),
    }
}

/// The merge a local aggregation leaves behind when its groups span sites.
pub fn split_merge(agg: &Aggregator) -> Option<Merge> {
    match agg {
        Aggregator::Binary(c) if c.post.is_empty() => Some(Merge::Binary(c.op.clone())),
        Aggregator::MinIndex { .. } => Some(Merge::MinIndex),
        _ => None,
    }
}

/// Whether `agg` finishes partial aggregates of kind `m`.
pub fn merges(agg: &Aggregator, m: &Merge) -> bool {
    match (agg, m) {
        (Aggregator::Binary(c), Merge::Binary(op)) => c.pre.is_empty() && &c.op == op,
        (Aggregator::MinIndex { merge_states: true }, Merge::MinIndex) => true,
        _ => false,
    }
}

/// Validates and flattens a plan for execution at `sites` sites.
pub fn prepare(plan: &IaPlan, catalog: &Catalog, reg: &KernelRegistry, sites: usize) -> Result<ExecPlan> {
    let infos = type_and_validate(plan, catalog, reg, sites)?;
    let (nodes, inputs, roots) = plan.indexed();
    let nodes = nodes
        .iter()
        .zip(inputs)
        .zip(&infos)
        .map(|((n, ins), info)| ExecNode {
            op: n.op.clone(),
            replicated_input: n.op.is_movement() && infos[ins[0]].placement == Placement::All,
            inputs: ins,
            key_arity: info.key_arity,
            array_type: info.array_type.clone(),
        })
        .collect();
    Ok(ExecPlan { sites, nodes, roots })
}

/// Notes for `IaPlan::explain`, one per node.
pub fn info_notes(infos: &[NodeInfo]) -> Vec<String> {
    infos.iter().map(|i| i.to_string()).collect()
}

/// Convenience for building joins with a fused output key map.
pub fn join_with_map(keys_l: &[usize], keys_r: &[usize], proj: Combine, out_map: KeyFn, l: NodeRef, r: NodeRef) -> NodeRef {
    plan::node(
        IaOp::Join { keys_l: keys_l.to_vec(), keys_r: keys_r.to_vec(), proj, out_map: Some(out_map) },
        vec![l, r],
    )
}

/// `Map` that only applies kernels to arrays.
pub fn transform(key_arity: usize, calls: Vec<KernelCall>, x: NodeRef) -> NodeRef {
    plan::map(KeyMap::identity(key_arity), ArrayMap::Chain(calls), x)
}
