//! Plans with data for checking rewrites: compiled random programs, the
//! workload plans and shapes that exercise specific rules.

use std::collections::BTreeMap;

use super::{random_case, same_relation};
use tra::compiler::{compile, prepare};
use tra::ia::{dense_source, execute_reference, PartitionSpec};
use tra::ops::Combine;
use tra::plan::{self, IaPlan};
use tra::rewrite::{Budget, Optimizer, Rule};
use tra::tra::Catalog;
use tra::workloads::*;
use tra::{KernelRegistry, TensorRelation};

pub fn run(plan: &IaPlan, catalog: &Catalog, sites: usize) -> Vec<TensorRelation> {
    let reg = KernelRegistry::global();
    let exec = prepare(plan, catalog, reg, sites).unwrap();
    let out = execute_reference(&exec, reg, &dense_source(catalog, sites)).unwrap();
    exec.roots.iter().map(|&r| out.outputs[r].to_logical().unwrap()).collect()
}

pub fn corpus() -> Vec<(String, IaPlan, Catalog, f64)> {
    let reg = KernelRegistry::global();
    let mut out = Vec::new();
    for seed in 0..120 {
        let c = random_case(seed);
        let plan = compile(&c.expr, &c.catalog, reg).unwrap();
        out.push((format!("random {seed} {:?}", c.steps), plan, c.catalog, if c.integer { 0.0 } else { 1e-9 }));
    }
    let mm = MatmulConfig { i: 8, k: 8, j: 8, nbi: 2, nbk: 2, nbj: 2 };
    for st in MatmulStrategy::ALL {
        let (c, _, _) = matmul_data(&mm, 3, st.layout()).unwrap();
        out.push((format!("matmul {}", st.name()), matmul_plan(st, &mm), c, 1e-9));
    }
    let (c, _, _) = matmul_data(&mm, 3, (PartitionSpec::Dims(vec![0]), PartitionSpec::Dims(vec![1]))).unwrap();
    out.push(("compiled matmul".into(), compile(&matmul_expr(), &c, reg).unwrap(), c, 1e-9));
    let nn = NnConfig { n: 16, d: 8, row_blocks: 2, col_blocks: 2 };
    for v in NnVariant::ALL {
        let c = nn_catalog(&nn, v, &nn_data(&nn, 5).unwrap()).unwrap();
        out.push((v.name().to_string(), nn_plan(v), c, 1e-9));
    }
    let ff = FfnnConfig { n: 8, d: 4, h: 4, l: 4, eta: 0.1, n_blocks: 2, d_blocks: 2, h_blocks: 2, l_blocks: 2 };
    for v in FfnnVariant::ALL {
        let c = ffnn_catalog(&ff, v, &ffnn_data(&ff, 5).unwrap()).unwrap();
        out.push((v.name().to_string(), ffnn_plan(v, ff.eta), c, 1e-9));
    }
    // Joins of inputs already shuffled on the join keys, then reshuffled.
    let mut c = Catalog::new();
    c.add_relation("X", super::relation(8, 0, true, (3, 3), 2), PartitionSpec::None).unwrap();
    c.add_relation("Y", super::relation(8, 1, true, (3, 3), 2), PartitionSpec::Dims(vec![1])).unwrap();
    let (x, y) = (plan::source("X"), plan::source("Y"));
    let on = |keys: &[usize], kl: &[usize], kr: &[usize], outer: &[usize]| {
        let j = plan::join(kl, kr, Combine::op("matAdd"), plan::shuf(keys, x.clone()), plan::shuf(kr, y.clone()));
        IaPlan::new(plan::shuf(outer, j))
    };
    out.push(("reshuffled join".into(), on(&[0, 1], &[0, 1], &[0, 1], &[0, 1]), c.clone(), 0.0));
    out.push(("reshuffled join on k0".into(), on(&[0], &[0], &[0], &[0]), c, 0.0));
    let (c, _, _) = diag_data(4, 2, 1).unwrap();
    out.push(("diag".into(), compile(&diag_expr(), &c, reg).unwrap(), c, 0.0));
    out
}

pub fn check_all(results: &[TensorRelation], want: &[TensorRelation], tol: f64) -> Result<(), String> {
    for (g, w) in results.iter().zip(want) {
        same_relation(g, w, tol)?;
    }
    Ok(())
}

/// Applies every rule at every node of every corpus plan and runs each
/// rewrite; returns how often each rule fired.
pub fn check_every_rule() -> Result<BTreeMap<&'static str, usize>, String> {
    let reg = KernelRegistry::global();
    let mut fired: BTreeMap<&str, usize> = Rule::all().into_iter().map(|r| (r.name(), 0)).collect();
    for (name, plan, catalog, tol) in corpus() {
        for sites in [2, 3] {
            let want = run(&plan, &catalog, sites);
            for complement in [false, true] {
                let o = Optimizer { two_phase_complement: complement, ..Optimizer::new(&catalog, reg, sites) };
                for rule in Rule::all() {
                    for id in 0..plan.node_count() {
                        for q in o.rewrites_at(rule, &plan, id) {
                            *fired.get_mut(rule.name()).unwrap() += 1;
                            check_all(&run(&q, &catalog, sites), &want, tol).map_err(|msg| {
                                format!("{rule} at node {id} of {name}, s={sites}: {msg}\n{}\n=>\n{}", plan.explain(None), q.explain(None))
                            })?;
                        }
                    }
                }
            }
        }
    }
    Ok(fired)
}

/// Every plan reachable in a bounded search agrees with its input plan.
pub fn check_enumerated_spaces() -> Result<usize, String> {
    let reg = KernelRegistry::global();
    let mut plans = 0;
    for (name, plan, catalog, tol) in corpus().into_iter().step_by(7) {
        let o = Optimizer::new(&catalog, reg, 2);
        let space = o.enumerate(&plan, &Rule::all(), Budget { max_plans: 60, max_depth: 3 }).map_err(|e| e.to_string())?;
        let want = run(&plan, &catalog, 2);
        for e in &space.entries {
            plans += 1;
            check_all(&run(&e.plan, &catalog, 2), &want, tol).map_err(|msg| format!("{name} via {:?}: {msg}", e.trace))?;
        }
    }
    Ok(plans)
}
