//! Equivalence rules over IA plans, plan-space enumeration and plan choice.
//!
//! Every rule proposes replacement nodes from structure, kernel flags and
//! key-expression ASTs alone. A proposal only counts as a match when the
//! rewritten plan still type-checks and validates at the configured site
//! count, so a rule can never hand back a plan the runtime would reject.

use std::collections::{HashMap, HashSet, VecDeque};

use crate::compiler::{co_partitioned, type_and_validate};
use crate::cost::{cost_plan, infer_frontiers};
use crate::error::{Error, Result};
use crate::ia::{sorted_dims, Placement};
use crate::kernels::KernelRegistry;
use crate::keyexpr::{Expr, KeyFn};
use crate::model::Key;
use crate::ops::{Aggregator, ArrayMap, Combine, KernelCall, KeyMap};
use crate::plan::{self, IaOp, IaPlan, NodeInfo, NodeRef, PlanNode};
use crate::tra::Catalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    MergeFilters,
    MergeMaps,
    SwapMapFilter,
    MapIntoAgg,
    FilterBelowAgg,
    FilterBelowJoin,
    MapIntoJoin,
    CollapseMoves,
    SwapMoveFilter,
    SwapMoveMap,
    DropAggShuffle,
    TwoPhaseAgg,
    JoinStrategy,
    DropJoinShuffle,
    ToBmm,
    ToCmm,
    ToRmm,
}

pub const SIMPLE_RULES: [Rule; 14] = [
    Rule::MergeFilters,
    Rule::MergeMaps,
    Rule::SwapMapFilter,
    Rule::MapIntoAgg,
    Rule::FilterBelowAgg,
    Rule::FilterBelowJoin,
    Rule::MapIntoJoin,
    Rule::CollapseMoves,
    Rule::SwapMoveFilter,
    Rule::SwapMoveMap,
    Rule::DropAggShuffle,
    Rule::TwoPhaseAgg,
    Rule::JoinStrategy,
    Rule::DropJoinShuffle,
];

pub const DOMAIN_RULES: [Rule; 3] = [Rule::ToBmm, Rule::ToCmm, Rule::ToRmm];

impl Rule {
    pub fn all() -> Vec<Rule> {
        SIMPLE_RULES.iter().chain(DOMAIN_RULES.iter()).copied().collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Rule::MergeFilters => "R1-1",
            Rule::MergeMaps => "R1-2",
            Rule::SwapMapFilter => "R1-3",
            Rule::MapIntoAgg => "R1-4",
            Rule::FilterBelowAgg => "R1-5",
            Rule::FilterBelowJoin => "R1-6",
            Rule::MapIntoJoin => "R1-7",
            Rule::CollapseMoves => "R2-1",
            Rule::SwapMoveFilter => "R2-2",
            Rule::SwapMoveMap => "R2-3",
            Rule::DropAggShuffle => "R2-4",
            Rule::TwoPhaseAgg => "R2-5",
            Rule::JoinStrategy => "R2-6",
            Rule::DropJoinShuffle => "R2-7",
            Rule::ToBmm => "BMM",
            Rule::ToCmm => "CMM",
            Rule::ToRmm => "RMM",
        }
    }

    pub fn parse(s: &str) -> Option<Rule> {
        Rule::all().into_iter().find(|r| r.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub max_plans: usize,
    pub max_depth: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_plans: 10_000, max_depth: 12 }
    }
}

#[derive(Debug, Clone)]
pub struct PlanEntry {
    pub plan: IaPlan,
    pub hash: u64,
    pub nodes: usize,
    pub cost: u64,
    /// Rule applications from the input plan, as `rule@node`.
    pub trace: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PlanSpace {
    /// Discovery order; the input plan is first.
    pub entries: Vec<PlanEntry>,
    pub truncated: bool,
}

impl PlanSpace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, plan: &IaPlan) -> bool {
        let h = plan.canonical_hash();
        self.entries.iter().any(|e| e.hash == h)
    }

    /// Entries by (cost, node count, hash).
    pub fn ranked(&self) -> Vec<&PlanEntry> {
        let mut v: Vec<&PlanEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| (e.cost, e.nodes, e.hash));
        v
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,hash,nodes,cost,trace\n");
        for (i, e) in self.ranked().iter().enumerate() {
            s.push_str(&format!("{},{:016x},{},{},\"{}\"\n", i, e.hash, e.nodes, e.cost, e.trace.join(" ")));
        }
        s
    }

    pub fn to_text(&self, limit: usize) -> String {
        let mut s = format!("{:>4}  {:<16}  {:>5}  {:>16}  trace\n", "rank", "hash", "nodes", "cost");
        for (i, e) in self.ranked().iter().take(limit).enumerate() {
            let trace = if e.trace.is_empty() { "(input)".to_string() } else { e.trace.join(" ") };
            s.push_str(&format!("{:>4}  {:016x}  {:>5}  {:>16}  {}\n", i, e.hash, e.nodes, e.cost, trace));
        }
        s
    }
}

/// Minimum cost, then fewer nodes, then canonical hash.
pub fn select_best(space: &PlanSpace) -> Option<&PlanEntry> {
    space.entries.iter().min_by_key(|e| (e.cost, e.nodes, e.hash))
}

struct Facts {
    ids: HashMap<*const PlanNode, usize>,
    infos: Vec<NodeInfo>,
    fronts: Vec<Key>,
}

impl Facts {
    fn info(&self, n: &NodeRef) -> &NodeInfo {
        &self.infos[self.ids[&std::sync::Arc::as_ptr(n)]]
    }

    fn front(&self, n: &NodeRef) -> &Key {
        &self.fronts[self.ids[&std::sync::Arc::as_ptr(n)]]
    }

    fn arity(&self, n: &NodeRef) -> usize {
        self.info(n).key_arity
    }
}

/// Rule application, enumeration and selection over one catalog and site count.
pub struct Optimizer<'a> {
    pub catalog: &'a Catalog,
    pub reg: &'a KernelRegistry,
    pub sites: usize,
    /// Two-phase aggregation fires when the shuffle dims are a subset of the
    /// group-by keys instead of a strict superset.
    pub two_phase_complement: bool,
}

impl<'a> Optimizer<'a> {
    pub fn new(catalog: &'a Catalog, reg: &'a KernelRegistry, sites: usize) -> Self {
        Optimizer { catalog, reg, sites, two_phase_complement: false }
    }

    fn facts(&self, plan: &IaPlan) -> Option<Facts> {
        let infos = type_and_validate(plan, self.catalog, self.reg, self.sites).ok()?;
        let fronts = infer_frontiers(plan, self.catalog).ok()?;
        let ids = plan.nodes().iter().enumerate().map(|(i, n)| (std::sync::Arc::as_ptr(n), i)).collect();
        Some(Facts { ids, infos, fronts })
    }

    fn valid(&self, plan: &IaPlan) -> bool {
        type_and_validate(plan, self.catalog, self.reg, self.sites).is_ok()
    }

    pub fn rule_label(&self, rule: Rule) -> String {
        if rule == Rule::TwoPhaseAgg && self.two_phase_complement {
            "R2-5/complement".into()
        } else {
            rule.name().into()
        }
    }

    /// All valid rewrites of `plan` by `rule` at node `id`.
    pub fn rewrites_at(&self, rule: Rule, plan: &IaPlan, id: usize) -> Vec<IaPlan> {
        let Some(fx) = self.facts(plan) else { return Vec::new() };
        self.rewrites_with(rule, plan, id, &fx)
    }

    fn rewrites_with(&self, rule: Rule, plan: &IaPlan, id: usize, fx: &Facts) -> Vec<IaPlan> {
        let Some(n) = plan.node_at(id) else { return Vec::new() };
        let own = plan.canonical_hash();
        let mut seen = HashSet::new();
        self.candidates(rule, &n, fx)
            .into_iter()
            .map(|r| plan.replace(id, r))
            .filter(|p| {
                let h = p.canonical_hash();
                h != own && seen.insert(h) && self.valid(p)
            })
            .collect()
    }

    pub fn apply_rule_at(&self, rule: Rule, plan: &IaPlan, id: usize) -> Option<IaPlan> {
        self.rewrites_at(rule, plan, id).into_iter().next()
    }

    /// Breadth-first closure of `plan` under `rules`, deduplicated by canonical hash.
    pub fn enumerate(&self, plan: &IaPlan, rules: &[Rule], budget: Budget) -> Result<PlanSpace> {
        if budget.max_plans == 0 {
            return Err(Error::ZeroBudget);
        }
        let cost = cost_plan(plan, self.catalog, self.reg, self.sites)?.total;
        let root = PlanEntry { plan: plan.clone(), hash: plan.canonical_hash(), nodes: plan.node_count(), cost, trace: vec![] };
        let mut seen: HashSet<u64> = HashSet::from([root.hash]);
        let mut entries = vec![root];
        let mut queue = VecDeque::from([(0usize, 0usize)]);
        let mut truncated = false;
        'bfs: while let Some((idx, depth)) = queue.pop_front() {
            if depth >= budget.max_depth {
                continue;
            }
            let current = entries[idx].plan.clone();
            let trace = entries[idx].trace.clone();
            let Some(fx) = self.facts(&current) else { continue };
            for id in 0..current.node_count() {
                for &rule in rules {
                    for next in self.rewrites_with(rule, &current, id, &fx) {
                        let hash = next.canonical_hash();
                        if !seen.insert(hash) {
                            continue;
                        }
                        if entries.len() >= budget.max_plans {
                            truncated = true;
                            break 'bfs;
                        }
                        let Ok(report) = cost_plan(&next, self.catalog, self.reg, self.sites) else { continue };
                        let mut t = trace.clone();
                        t.push(format!("{}@{id}", self.rule_label(rule)));
                        entries.push(PlanEntry { nodes: next.node_count(), plan: next, hash, cost: report.total, trace: t });
                        queue.push_back((entries.len() - 1, depth + 1));
                    }
                }
            }
        }
        Ok(PlanSpace { entries, truncated })
    }

    /// Applies movement cleanups (R2-1, R2-4) until none match.
    pub fn simplify(&self, plan: &IaPlan) -> IaPlan {
        let mut cur = plan.clone();
        'outer: loop {
            let Some(fx) = self.facts(&cur) else { return cur };
            for id in 0..cur.node_count() {
                for rule in [Rule::CollapseMoves, Rule::DropAggShuffle] {
                    if let Some(next) = self.rewrites_with(rule, &cur, id, &fx).into_iter().next() {
                        cur = next;
                        continue 'outer;
                    }
                }
            }
            return cur;
        }
    }

    fn candidates(&self, rule: Rule, n: &NodeRef, fx: &Facts) -> Vec<NodeRef> {
        let inp = |i: usize| n.inputs[i].clone();
        match rule {
            Rule::MergeFilters => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (IaOp::Filter { pred: outer }, Some(IaOp::Filter { pred: inner })) => {
                    vec![plan::filter(inner.and(outer), inp(0).inputs[0].clone())]
                }
                _ => vec![],
            },
            Rule::MergeMaps => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (
                    IaOp::Map { key_map: KeyMap::Func(k2), array_map: ArrayMap::Chain(a2) },
                    Some(IaOp::Map { key_map: KeyMap::Func(k1), array_map: ArrayMap::Chain(a1) }),
                ) => {
                    let chain = a1.iter().chain(a2).cloned().collect();
                    vec![plan::map(KeyMap::Func(k2.compose(k1)), ArrayMap::Chain(chain), inp(0).inputs[0].clone())]
                }
                _ => vec![],
            },
            Rule::SwapMapFilter => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (IaOp::Filter { pred }, Some(IaOp::Map { key_map, array_map: am @ ArrayMap::Chain(_) }))
                    if key_map.is_identity(fx.arity(&inp(0))) =>
                {
                    let x = inp(0).inputs[0].clone();
                    vec![plan::map(key_map.clone(), am.clone(), plan::filter(pred.clone(), x))]
                }
                (IaOp::Map { key_map, array_map: am @ ArrayMap::Chain(_) }, Some(IaOp::Filter { pred }))
                    if key_map.is_identity(fx.arity(&inp(0))) =>
                {
                    let x = inp(0).inputs[0].clone();
                    vec![plan::filter(pred.clone(), plan::map(key_map.clone(), am.clone(), x))]
                }
                _ => vec![],
            },
            Rule::MapIntoAgg => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (
                    IaOp::Map { key_map, array_map: ArrayMap::Chain(am) },
                    Some(IaOp::Agg { group_by, agg: Aggregator::Binary(c) }),
                ) if key_map.is_identity(group_by.len()) => {
                    let x = inp(0).inputs[0].clone();
                    let mut out = Vec::new();
                    let mut post = c.clone();
                    post.post.extend(am.iter().cloned());
                    out.push(plan::agg(group_by, Aggregator::Binary(post), x.clone()));
                    if c.post.is_empty() && self.all_distribute(am, &c.op) {
                        let mut pre = c.clone();
                        pre.pre.extend(am.iter().cloned());
                        out.push(plan::agg(group_by, Aggregator::Binary(pre), x));
                    }
                    out
                }
                _ => vec![],
            },
            Rule::FilterBelowAgg => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (IaOp::Filter { pred }, Some(IaOp::Agg { group_by, agg })) => {
                    let x = inp(0).inputs[0].clone();
                    let pushed = pred.after(&KeyFn::project(group_by));
                    vec![plan::agg(group_by, agg.clone(), plan::filter(pushed, x))]
                }
                _ => vec![],
            },
            Rule::FilterBelowJoin => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (IaOp::Filter { pred }, Some(IaOp::Join { keys_l, keys_r, proj, out_map: None }))
                    if pred.keys_used().iter().all(|d| keys_l.contains(d)) =>
                {
                    let j = inp(0);
                    let arity_l = fx.arity(&j.inputs[0]);
                    let mut sub: Vec<Expr> = vec![Expr::c(0); arity_l];
                    for (u, &d) in keys_l.iter().enumerate() {
                        sub[d] = Expr::key(keys_r[u]);
                    }
                    let right_pred = pred.after(&KeyFn::new(sub));
                    vec![plan::join(
                        keys_l,
                        keys_r,
                        proj.clone(),
                        plan::filter(pred.clone(), j.inputs[0].clone()),
                        plan::filter(right_pred, j.inputs[1].clone()),
                    )]
                }
                _ => vec![],
            },
            Rule::MapIntoJoin => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (
                    IaOp::Map { key_map: KeyMap::Func(km), array_map: ArrayMap::Chain(am) },
                    Some(IaOp::Join { keys_l, keys_r, proj, out_map }),
                ) => {
                    let j = inp(0);
                    let fused_map = match out_map {
                        None => km.clone(),
                        Some(o) => km.compose(o),
                    };
                    let join_arity = fx.arity(&j.inputs[0]) + fx.arity(&j.inputs[1]) - keys_l.len();
                    let fused_map = (!fused_map.is_identity(join_arity)).then_some(fused_map);
                    let mk = |c: Combine| {
                        plan::node(
                            IaOp::Join { keys_l: keys_l.clone(), keys_r: keys_r.clone(), proj: c, out_map: fused_map.clone() },
                            j.inputs.clone(),
                        )
                    };
                    let mut out = Vec::new();
                    let mut post = proj.clone();
                    post.post.extend(am.iter().cloned());
                    out.push(mk(post));
                    if proj.post.is_empty() && !am.is_empty() && self.all_distribute(am, &proj.op) {
                        let mut pre = proj.clone();
                        pre.pre.extend(am.iter().cloned());
                        out.push(mk(pre));
                    }
                    out
                }
                _ => vec![],
            },
            Rule::CollapseMoves => {
                let mut out = Vec::new();
                if n.op.is_movement() && inp(0).op.is_movement() {
                    out.push(plan::node(n.op.clone(), vec![inp(0).inputs[0].clone()]));
                }
                match &n.op {
                    IaOp::Shuf { dims } if fx.info(&inp(0)).placement == Placement::Part(sorted_dims(dims)) => {
                        out.push(inp(0))
                    }
                    IaOp::Bcast if fx.info(&inp(0)).placement == Placement::All => out.push(inp(0)),
                    _ => {}
                }
                out
            }
            Rule::SwapMoveFilter => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (IaOp::Filter { pred }, Some(mv @ (IaOp::Bcast | IaOp::Shuf { .. }))) => {
                    let x = inp(0).inputs[0].clone();
                    vec![plan::node(mv.clone(), vec![plan::filter(pred.clone(), x)])]
                }
                (mv @ (IaOp::Bcast | IaOp::Shuf { .. }), Some(IaOp::Filter { pred })) => {
                    let x = inp(0).inputs[0].clone();
                    vec![plan::filter(pred.clone(), moved(mv, x))]
                }
                _ => vec![],
            },
            Rule::SwapMoveMap => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (IaOp::Map { key_map, array_map }, Some(mv @ (IaOp::Bcast | IaOp::Shuf { .. }))) => {
                    let x = inp(0).inputs[0].clone();
                    if matches!(mv, IaOp::Shuf { .. }) && !key_map.is_identity(fx.arity(&x)) {
                        return vec![];
                    }
                    vec![plan::node(mv.clone(), vec![plan::map(key_map.clone(), array_map.clone(), x)])]
                }
                (mv @ (IaOp::Bcast | IaOp::Shuf { .. }), Some(IaOp::Map { key_map, array_map })) => {
                    let x = inp(0).inputs[0].clone();
                    if matches!(mv, IaOp::Shuf { .. }) && !key_map.is_identity(fx.arity(&x)) {
                        return vec![];
                    }
                    vec![plan::map(key_map.clone(), array_map.clone(), moved(mv, x))]
                }
                _ => vec![],
            },
            Rule::DropAggShuffle => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (IaOp::Agg { group_by, agg }, Some(IaOp::Shuf { dims })) if dims.iter().all(|d| group_by.contains(d)) => {
                    let x = inp(0).inputs[0].clone();
                    let placed = match &fx.info(&x).placement {
                        Placement::All => true,
                        Placement::Part(h) => h.iter().all(|d| group_by.contains(d)),
                        Placement::Spread => false,
                    };
                    if placed {
                        vec![plan::agg(group_by, agg.clone(), x)]
                    } else {
                        vec![]
                    }
                }
                _ => vec![],
            },
            Rule::TwoPhaseAgg => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (IaOp::Agg { group_by, agg }, Some(IaOp::Shuf { dims })) => {
                    let x = inp(0).inputs[0].clone();
                    if matches!(x.op, IaOp::Agg { .. }) {
                        return vec![];
                    }
                    let gb: HashSet<usize> = group_by.iter().copied().collect();
                    let pd: HashSet<usize> = dims.iter().copied().collect();
                    let applies =
                        if self.two_phase_complement { pd.is_subset(&gb) } else { gb.is_subset(&pd) && gb != pd };
                    if !applies {
                        return vec![];
                    }
                    let (inner, outer) = match agg {
                        Aggregator::Binary(c) => (
                            Aggregator::Binary(Combine { pre: c.pre.clone(), op: c.op.clone(), post: vec![] }),
                            Aggregator::Binary(Combine { pre: vec![], op: c.op.clone(), post: c.post.clone() }),
                        ),
                        Aggregator::MinIndex { merge_states } => (
                            Aggregator::MinIndex { merge_states: *merge_states },
                            Aggregator::MinIndex { merge_states: true },
                        ),
                        Aggregator::Concat { .. } => return vec![],
                    };
                    let positions: Vec<usize> =
                        group_by.iter().enumerate().filter(|(_, g)| pd.contains(g)).map(|(i, _)| i).collect();
                    let identity: Vec<usize> = (0..group_by.len()).collect();
                    vec![plan::agg(&identity, outer, plan::shuf(&positions, plan::agg(group_by, inner, x)))]
                }
                _ => vec![],
            },
            Rule::JoinStrategy => match &n.op {
                IaOp::Join { keys_l, keys_r, .. } => {
                    let l = strip_move(&inp(0));
                    let r = strip_move(&inp(1));
                    let with = |a: NodeRef, b: NodeRef| plan::node(n.op.clone(), vec![a, b]);
                    let mut out = vec![with(plan::bcast(l.clone()), r.clone()), with(l.clone(), plan::bcast(r.clone()))];
                    if co_partitioned(&sorted_dims(keys_l), &sorted_dims(keys_r), keys_l, keys_r) {
                        out.push(with(self.placed_on(&l, keys_l, fx), self.placed_on(&r, keys_r, fx)));
                    }
                    out
                }
                _ => vec![],
            },
            Rule::DropJoinShuffle => match (&n.op, n.inputs.first().map(|c| &c.op)) {
                (IaOp::Shuf { dims }, Some(IaOp::Join { keys_l, keys_r, out_map: None, .. }))
                    if dims.iter().all(|d| keys_l.contains(d)) =>
                {
                    let j = inp(0);
                    let shuffled_on = |c: &NodeRef, k: &[usize]| {
                        matches!(&c.op, IaOp::Shuf { dims } if sorted_dims(dims) == sorted_dims(k))
                    };
                    if shuffled_on(&j.inputs[0], keys_l) && shuffled_on(&j.inputs[1], keys_r) {
                        vec![j]
                    } else {
                        vec![]
                    }
                }
                _ => vec![],
            },
            Rule::ToBmm | Rule::ToCmm | Rule::ToRmm => self.matmul_forms(rule, n, fx),
        }
    }

    fn all_distribute(&self, calls: &[KernelCall], over: &KernelCall) -> bool {
        calls.iter().all(|c| self.reg.distributes(&c.name, &over.name))
    }

    /// `x` shuffled on `dims`, unless it is already partitioned that way.
    fn placed_on(&self, x: &NodeRef, dims: &[usize], fx: &Facts) -> NodeRef {
        if fx.info(x).placement == Placement::Part(sorted_dims(dims)) {
            x.clone()
        } else {
            plan::shuf(dims, x.clone())
        }
    }

    /// The three distributed matrix-multiply shapes, from any of them.
    fn matmul_forms(&self, rule: Rule, n: &NodeRef, fx: &Facts) -> Vec<NodeRef> {
        let IaOp::Agg { group_by, agg } = &n.op else { return vec![] };
        if group_by != &[0, 2] || !matches!(agg, Aggregator::Binary(_)) {
            return vec![];
        }
        let below = &n.inputs[0];
        let join = match &below.op {
            IaOp::Shuf { .. } => below.inputs[0].clone(),
            _ => below.clone(),
        };
        let IaOp::Join { keys_l, keys_r, proj, out_map: None } = &join.op else { return vec![] };
        let product_keys = keys_l == &[1] && keys_r == &[0];
        let replicated_keys = keys_l == &[0, 1, 2] && keys_r == &[0, 1, 2];
        let (l, r) = if product_keys {
            (strip_move(&join.inputs[0]), strip_move(&join.inputs[1]))
        } else if replicated_keys {
            match (unreplicate(&join.inputs[0], 2), unreplicate(&join.inputs[1], 0)) {
                (Some(l), Some(r)) => (l, r),
                _ => return vec![],
            }
        } else {
            return vec![];
        };
        if fx.arity(&l) != 2 || fx.arity(&r) != 2 {
            return vec![];
        }
        let product = |a: NodeRef, b: NodeRef| plan::join(&[1], &[0], proj.clone(), a, b);
        let form = match rule {
            Rule::ToBmm => plan::agg(&[0, 2], agg.clone(), plan::shuf(&[0, 2], product(plan::bcast(l), r))),
            Rule::ToCmm => {
                let (a, b) = (self.placed_on(&l, &[1], fx), self.placed_on(&r, &[0], fx));
                plan::agg(&[0, 2], agg.clone(), plan::shuf(&[0, 2], product(a, b)))
            }
            _ => {
                let x_dups = fx.front(&r)[1] as usize;
                let y_dups = fx.front(&l)[0] as usize;
                if x_dups == 0 || y_dups == 0 {
                    return vec![];
                }
                let a = plan::shuf(
                    &[0, 2],
                    plan::map(KeyMap::InsertDim { dim: 2, count: x_dups }, ArrayMap::Duplicate { count: x_dups }, l),
                );
                let b = plan::shuf(
                    &[0, 2],
                    plan::map(KeyMap::InsertDim { dim: 0, count: y_dups }, ArrayMap::Duplicate { count: y_dups }, r),
                );
                plan::agg(&[0, 2], agg.clone(), plan::join(&[0, 1, 2], &[0, 1, 2], proj.clone(), a, b))
            }
        };
        vec![form]
    }
}

fn strip_move(n: &NodeRef) -> NodeRef {
    let mut n = n.clone();
    while n.op.is_movement() {
        n = n.inputs[0].clone();
    }
    n
}

/// `mv` applied to `x`; a move directly under it is redundant and dropped.
fn moved(mv: &IaOp, x: NodeRef) -> NodeRef {
    let x = if x.op.is_movement() { x.inputs[0].clone() } else { x };
    plan::node(mv.clone(), vec![x])
}

/// Undoes the replication step of the replicated form on one side.
fn unreplicate(n: &NodeRef, dim: usize) -> Option<NodeRef> {
    let m = strip_move(n);
    match &m.op {
        IaOp::Map { key_map: KeyMap::InsertDim { dim: d, .. }, array_map: ArrayMap::Duplicate { .. } } if *d == dim => {
            Some(m.inputs[0].clone())
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ia::PartitionSpec;
    use crate::keyexpr::Pred;
    use crate::model::ArrayType;

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        c.add_shape("X", ArrayType::matrix(2, 2).unwrap(), vec![2, 2], PartitionSpec::None).unwrap();
        c.add_shape("Y", ArrayType::matrix(2, 2).unwrap(), vec![2, 2], PartitionSpec::None).unwrap();
        c
    }

    fn bmm() -> IaPlan {
        IaPlan::new(plan::agg(
            &[0, 2],
            Aggregator::op("matAdd"),
            plan::shuf(&[0, 2], plan::join(&[1], &[0], Combine::op("matMul"), plan::bcast(plan::source("X")), plan::source("Y"))),
        ))
    }

    #[test]
    fn collapse_broadcast_chain() {
        let c = catalog();
        let o = Optimizer::new(&c, KernelRegistry::global(), 2);
        let p = IaPlan::new(plan::bcast(plan::bcast(plan::source("X"))));
        let q = o.apply_rule_at(Rule::CollapseMoves, &p, 2).unwrap();
        assert_eq!(q.node_count(), 2);
        assert!(o.apply_rule_at(Rule::CollapseMoves, &q, 1).is_none());
    }

    #[test]
    fn drop_agg_shuffle_needs_placement() {
        let mut c = catalog();
        let o = Optimizer::new(&c, KernelRegistry::global(), 2);
        let p = IaPlan::new(plan::agg(&[0], Aggregator::op("matAdd"), plan::shuf(&[0], plan::source("X"))));
        assert!(o.apply_rule_at(Rule::DropAggShuffle, &p, 2).is_none());
        c.set_partition("X", PartitionSpec::Dims(vec![0])).unwrap();
        let o = Optimizer::new(&c, KernelRegistry::global(), 2);
        assert_eq!(o.apply_rule_at(Rule::DropAggShuffle, &p, 2).unwrap().node_count(), 2);
    }

    #[test]
    fn filter_pushdown_through_join_substitutes_keys() {
        let c = catalog();
        let o = Optimizer::new(&c, KernelRegistry::global(), 2);
        let j = plan::join(&[0, 1], &[1, 0], Combine::op("matAdd"), plan::bcast(plan::source("X")), plan::source("Y"));
        let p = IaPlan::new(plan::filter(Pred::new(Expr::binary("lt", Expr::key(0), Expr::key(1)).unwrap()), j));
        let q = o.apply_rule_at(Rule::FilterBelowJoin, &p, 4).unwrap();
        let text = q.explain(None);
        assert!(text.contains("k0 < k1"), "{text}");
        assert!(text.contains("k1 < k0"), "{text}");
    }

    #[test]
    fn matmul_space_has_all_three_forms() {
        let c = catalog();
        let o = Optimizer::new(&c, KernelRegistry::global(), 2);
        let space = o.enumerate(&bmm(), &Rule::all(), Budget { max_plans: 2000, max_depth: 3 }).unwrap();
        let cmm = o.apply_rule_at(Rule::ToCmm, &bmm(), 5).unwrap();
        let rmm = o.apply_rule_at(Rule::ToRmm, &bmm(), 5).unwrap();
        assert!(space.contains(&cmm) && space.contains(&rmm));
        assert!(rmm.explain(None).contains("insertDim"));
        let back = o.apply_rule_at(Rule::ToBmm, &rmm, rmm.node_count() - 1).unwrap();
        assert_eq!(back.canonical_hash(), bmm().canonical_hash());
    }

    #[test]
    fn empty_rule_set_and_zero_budget() {
        let c = catalog();
        let o = Optimizer::new(&c, KernelRegistry::global(), 2);
        assert_eq!(o.enumerate(&bmm(), &[], Budget::default()).unwrap().len(), 1);
        assert!(matches!(o.enumerate(&bmm(), &Rule::all(), Budget { max_plans: 0, max_depth: 3 }), Err(Error::ZeroBudget)));
    }

    #[test]
    fn two_phase_condition_follows_flag() {
        let c = catalog();
        // the inner aggregation only yields partials, merged after a second shuffle
        let partial = plan::agg(&[0], Aggregator::op("matAdd"), plan::shuf(&[0, 1], plan::source("X")));
        let p = IaPlan::new(plan::agg(&[0], Aggregator::op("matAdd"), plan::shuf(&[0], partial)));
        let o = Optimizer::new(&c, KernelRegistry::global(), 2);
        assert!(o.apply_rule_at(Rule::TwoPhaseAgg, &p, 2).is_some());
        let q = IaPlan::new(plan::agg(&[0, 1], Aggregator::op("matAdd"), plan::shuf(&[0], plan::source("X"))));
        assert!(o.apply_rule_at(Rule::TwoPhaseAgg, &q, 2).is_none());
        let oc = Optimizer { two_phase_complement: true, ..Optimizer::new(&c, KernelRegistry::global(), 2) };
        assert!(oc.apply_rule_at(Rule::TwoPhaseAgg, &q, 2).is_some());
        assert_eq!(oc.rule_label(Rule::TwoPhaseAgg), "R2-5/complement");
    }
}
