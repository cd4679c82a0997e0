//! Whole suites shared by the core tests and the acceptance harness. Each
//! returns a short summary on success and the first mismatch on failure.

use std::collections::BTreeSet;

use super::{random_case, same_relation};
use tra::compiler::compile;
use tra::cost::{cost_plan, simulated_transfers};
use tra::plan::{IaOp, IaPlan, NodeRef};
use tra::rewrite::{select_best, Budget, Optimizer, Rule};
use tra::runtime::{execute, measure_transfers, RuntimeConfig};
use tra::tra::{eval_expr, Catalog, TraExpr};
use tra::workloads::*;
use tra::KernelRegistry;

pub const OPERATORS: [&str; 7] = ["aggregate", "join", "rekey", "filter", "transform", "tile", "concat"];

pub struct OracleSummary {
    pub cases: u64,
    pub operators: BTreeSet<&'static str>,
    pub integer_cases: usize,
    pub non_empty: usize,
}

fn operators(e: &TraExpr, out: &mut BTreeSet<&'static str>) {
    out.insert(e.kind());
    for c in e.children() {
        operators(c, out);
    }
}

/// Compiles `cases` random programs and runs each on 1 to 4 sites against
/// logical evaluation: bit for bit on integer data, within 1e-9 otherwise.
pub fn oracle_suite(cases: u64) -> Result<OracleSummary, String> {
    let reg = KernelRegistry::global();
    let mut sum = OracleSummary { cases, operators: BTreeSet::new(), integer_cases: 0, non_empty: 0 };
    for seed in 0..cases {
        let case = random_case(seed);
        operators(&case.expr, &mut sum.operators);
        sum.integer_cases += usize::from(case.integer);
        let ctx = |e: String| format!("seed {seed} {:?}: {e}", case.steps);
        let want = eval_expr(&case.expr, &case.catalog, reg).map_err(|e| ctx(e.to_string()))?;
        let plan = compile(&case.expr, &case.catalog, reg).map_err(|e| ctx(e.to_string()))?;
        sum.non_empty += usize::from(!want.is_empty());
        let tol = if case.integer { 0.0 } else { 1e-9 };
        for s in 1..=4 {
            let run = execute(&plan, &case.catalog, reg, &RuntimeConfig::threads(s)).map_err(|e| ctx(format!("s={s}: {e}")))?;
            let got = run.roots[0].to_logical().map_err(|e| ctx(e.to_string()))?;
            same_relation(&got, &want, tol).map_err(|m| ctx(format!("s={s}: {m}\n{}", plan.explain(None))))?;
        }
    }
    Ok(sum)
}

/// Predicted, simulated and measured transfer agree node by node at 1 to 4 sites.
pub fn metering_matches(name: &str, plan: &IaPlan, catalog: &Catalog) -> Result<(), String> {
    let reg = KernelRegistry::global();
    for s in 1..=4 {
        let fail = |e: String| format!("{name} at s={s}: {e}");
        let predicted = cost_plan(plan, catalog, reg, s).map_err(|e| fail(e.to_string()))?;
        let run = execute(plan, catalog, reg, &RuntimeConfig::threads(s)).map_err(|e| fail(e.to_string()))?;
        let (measured, total) = measure_transfers(&run.trace);
        if measured != predicted.transfers() || total != predicted.total {
            return Err(fail(format!("predicted {:?}, measured {measured:?}", predicted.transfers())));
        }
        let simulated = simulated_transfers(plan, catalog, reg, s).map_err(|e| fail(e.to_string()))?;
        if simulated != measured {
            return Err(fail(format!("simulated {simulated:?}, measured {measured:?}")));
        }
    }
    Ok(())
}

/// Every desk-scale workload plan with its data.
pub fn workload_plans() -> Vec<(String, IaPlan, Catalog)> {
    let mut out = Vec::new();
    let mm = MatmulConfig::desk();
    for st in MatmulStrategy::ALL {
        let (c, _, _) = matmul_data(&mm, 1, st.layout()).unwrap();
        out.push((st.name().to_string(), matmul_plan(st, &mm), c));
    }
    let nn = NnConfig::desk();
    let data = nn_data(&nn, 1).unwrap();
    for v in NnVariant::ALL {
        out.push((v.name().to_string(), nn_plan(v), nn_catalog(&nn, v, &data).unwrap()));
    }
    let ff = FfnnConfig::desk();
    let data = ffnn_data(&ff, 1).unwrap();
    for v in FfnnVariant::ALL {
        out.push((v.name().to_string(), ffnn_plan(v, ff.eta), ffnn_catalog(&ff, v, &data).unwrap()));
    }
    let (c, _, _) = diag_data(4, 2, 1).unwrap();
    out.push(("diag".into(), compile(&diag_expr(), &c, KernelRegistry::global()).unwrap(), c));
    out
}

/// Metering over the workload plans and `random` compiled random programs.
pub fn metering_suite(random: u64) -> Result<usize, String> {
    let mut plans = 0;
    for (name, plan, catalog) in workload_plans() {
        metering_matches(&name, &plan, &catalog)?;
        plans += 1;
    }
    for seed in 0..random {
        let case = random_case(seed);
        let plan = compile(&case.expr, &case.catalog, KernelRegistry::global()).map_err(|e| e.to_string())?;
        metering_matches(&format!("seed {seed}"), &plan, &case.catalog)?;
        plans += 1;
    }
    Ok(plans)
}

fn below_moves(n: &NodeRef) -> &NodeRef {
    match n.op {
        IaOp::Bcast | IaOp::Shuf { .. } => below_moves(&n.inputs[0]),
        _ => n,
    }
}

/// The single local join computes `diag` in its projection and reads both
/// inputs through equality filters; no separate map remains.
pub fn is_fused_diag(plan: &IaPlan) -> bool {
    let root = below_moves(&plan.roots[0]);
    let IaOp::Join { proj, .. } = &root.op else { return false };
    let calls = proj.pre.iter().chain([&proj.op]).chain(&proj.post);
    let has_diag = calls.clone().any(|k| k.name == "diag");
    let filtered = root.inputs.iter().all(|i| matches!(below_moves(i).op, IaOp::Filter { .. }));
    let maps = plan.nodes().iter().filter(|n| matches!(n.op, IaOp::Map { .. })).count();
    has_diag && filtered && maps == 0
}

pub struct DiagSummary {
    pub initial_cost: u64,
    pub best_cost: u64,
    pub initial_measured: u64,
    pub best_measured: u64,
    pub plans: usize,
}

/// Enumerates from the compiled `diag(X + Y)` plan on `sites` sites and
/// checks that the cheapest plan is fused, cheaper in prediction and in
/// measurement, and still matches the dense oracle.
pub fn diag_derivation(sites: usize, seed: u64) -> Result<DiagSummary, String> {
    let reg = KernelRegistry::global();
    let err = |e: tra::Error| e.to_string();
    let (c, x, y) = diag_data(4, 2, seed).map_err(err)?;
    let oracle = diag_oracle(&x, &y, 2).map_err(err)?;
    let initial = compile(&diag_expr(), &c, reg).map_err(err)?;
    let space = Optimizer::new(&c, reg, sites).enumerate(&initial, &Rule::all(), Budget::default()).map_err(err)?;
    let best = select_best(&space).ok_or("empty plan space")?;
    if !is_fused_diag(&best.plan) {
        return Err(format!("cheapest plan is not fused:\n{}", best.plan.explain(None)));
    }
    let rt = RuntimeConfig::threads(sites);
    let mut measured = Vec::new();
    for plan in [&initial, &best.plan] {
        let run = execute(plan, &c, reg, &rt).map_err(err)?;
        let got = run.roots[0].to_logical().map_err(err)?;
        same_relation(&got, &oracle, 0.0)?;
        measured.push(measure_transfers(&run.trace).1);
    }
    let sum = DiagSummary {
        initial_cost: cost_plan(&initial, &c, reg, sites).map_err(err)?.total,
        best_cost: best.cost,
        initial_measured: measured[0],
        best_measured: measured[1],
        plans: space.entries.len(),
    };
    if sum.best_cost >= sum.initial_cost || sum.best_measured >= sum.initial_measured {
        return Err(format!(
            "no saving: predicted {} -> {}, measured {} -> {}",
            sum.initial_cost, sum.best_cost, sum.initial_measured, sum.best_measured
        ));
    }
    Ok(sum)
}
