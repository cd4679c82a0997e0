use tra::compiler::compile;
use tra::ia::PartitionSpec;
use tra::model::unblockify;
use tra::runtime::{execute, RuntimeConfig};
use tra::tra::eval_expr;
use tra::workloads::*;
use tra::KernelRegistry;

fn reg() -> &'static KernelRegistry {
    KernelRegistry::global()
}

#[test]
fn matmul_plans_match_dense_product() {
    let cfg = MatmulConfig::desk();
    for s in [1, 2, 3] {
        for st in MatmulStrategy::ALL {
            let (c, a, b) = matmul_data(&cfg, 11, st.layout()).unwrap();
            let run = execute(&matmul_plan(st, &cfg), &c, reg(), &RuntimeConfig::threads(s)).unwrap();
            let got = unblockify(&run.roots[0].to_logical().unwrap()).unwrap();
            assert!(got.max_abs_diff(&dense_matmul(&a, &b)) < 1e-9, "{} at s={s}", st.name());
        }
    }
}

#[test]
fn compiled_matmul_expression_matches_logical_evaluation() {
    let cfg = MatmulConfig::desk();
    let (c, _, _) = matmul_data(&cfg, 2, (PartitionSpec::None, PartitionSpec::None)).unwrap();
    let want = eval_expr(&matmul_expr(), &c, reg()).unwrap();
    let plan = compile(&matmul_expr(), &c, reg()).unwrap();
    let got = execute(&plan, &c, reg(), &RuntimeConfig::threads(2)).unwrap().roots[0].to_logical().unwrap();
    assert!(got.bit_eq(&want));
}

#[test]
fn nn_plans_find_the_nearest_row() {
    let cfg = NnConfig::desk();
    for seed in [1, 2, 3] {
        let data = nn_data(&cfg, seed).unwrap();
        let (row, dist) = nn_oracle(&data);
        for v in NnVariant::ALL {
            let c = nn_catalog(&cfg, v, &data).unwrap();
            let run = execute(&nn_plan(v), &c, reg(), &RuntimeConfig::threads(2)).unwrap();
            let out = run.roots[0].to_logical().unwrap();
            assert_eq!(out.len(), 1);
            let vals = out.tuples()[0].1.values().to_vec();
            assert_eq!(vals[1] as usize, row, "{} seed {seed}", v.name());
            assert!((vals[0] - dist).abs() < 1e-9 * dist.abs().max(1.0));
        }
    }
}

#[test]
fn nn_query_in_candidate_set_has_zero_distance() {
    let cfg = NnConfig::desk();
    let mut data = nn_data(&cfg, 9).unwrap();
    data.q = data.x.values()[37 * cfg.d..38 * cfg.d].to_vec();
    for v in NnVariant::ALL {
        let c = nn_catalog(&cfg, v, &data).unwrap();
        let out = execute(&nn_plan(v), &c, reg(), &RuntimeConfig::threads(2)).unwrap().roots[0].to_logical().unwrap();
        let vals = out.tuples()[0].1.values().to_vec();
        assert_eq!(vals[1], 37.0);
        assert!(vals[0].abs() < 1e-9);
    }
}

#[test]
fn ffnn_plans_take_the_same_step_as_the_dense_oracle() {
    let cfg = FfnnConfig::desk();
    let data = ffnn_data(&cfg, 4).unwrap();
    let (w1, w2) = ffnn_oracle(&data, cfg.eta);
    for s in [1, 2] {
        for v in FfnnVariant::ALL {
            let c = ffnn_catalog(&cfg, v, &data).unwrap();
            let run = execute(&ffnn_plan(v, cfg.eta), &c, reg(), &RuntimeConfig::threads(s)).unwrap();
            let g1 = unblockify(&run.roots[0].to_logical().unwrap()).unwrap();
            let g2 = unblockify(&run.roots[1].to_logical().unwrap()).unwrap();
            assert!(g1.max_abs_diff(&w1) < 1e-9, "{} W1 at s={s}", v.name());
            assert!(g2.max_abs_diff(&w2) < 1e-9, "{} W2 at s={s}", v.name());
        }
    }
}

#[test]
fn diag_expression_matches_oracle() {
    let (c, x, y) = diag_data(4, 2, 1).unwrap();
    let got = eval_expr(&diag_expr(), &c, reg()).unwrap();
    assert!(got.bit_eq(&diag_oracle(&x, &y, 2).unwrap()));
}
