//! Cost tables for the full-scale presets and oracle-checked runs at desk scale.

use tra::cost::{cost_plan, sci};
use tra::model::unblockify;
use tra::plan::IaPlan;
use tra::runtime::{execute, measure_transfers, RuntimeConfig};
use tra::tra::Catalog;
use tra::workloads::*;
use tra::{KernelRegistry, Result};

/// Inputs larger than this many floats are costed but not executed.
pub const DESK_FLOATS: usize = 1 << 20;

pub struct Table {
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<u64>)>,
}

impl Table {
    pub fn text(&self) -> String {
        let w0 = self.rows.iter().map(|r| r.0.len()).chain([self.corner.len()]).max().unwrap_or(0);
        let mut s = format!("{:<w0$}", self.corner);
        for c in &self.columns {
            s.push_str(&format!("  {c:>8}"));
        }
        s.push('\n');
        for (name, costs) in &self.rows {
            s.push_str(&format!("{name:<w0$}"));
            for c in costs {
                s.push_str(&format!("  {:>8}", sci(*c)));
            }
            s.push('\n');
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("row,plan,cost,cost_sci\n");
        for (name, costs) in &self.rows {
            for (c, v) in self.columns.iter().zip(costs) {
                s.push_str(&format!("{name},{c},{v},{}\n", sci(*v)));
            }
        }
        s
    }
}

fn cost(plan: &IaPlan, catalog: &Catalog, sites: usize) -> Result<u64> {
    Ok(cost_plan(plan, catalog, KernelRegistry::global(), sites)?.total)
}

pub fn matmul_table(configs: &[(String, MatmulConfig)], sites: usize) -> Result<Table> {
    let mut rows = Vec::new();
    for (name, cfg) in configs {
        let costs = MatmulStrategy::ALL
            .iter()
            .map(|&st| cost(&matmul_plan(st, cfg), &matmul_shapes(cfg, st.layout())?, sites))
            .collect::<Result<_>>()?;
        rows.push((name.clone(), costs));
    }
    Ok(Table { corner: "shape".into(), columns: MatmulStrategy::ALL.iter().map(|s| s.name().into()).collect(), rows })
}

pub fn nn_table(configs: &[(String, NnConfig)], sites: usize) -> Result<Table> {
    let mut rows = Vec::new();
    for (name, cfg) in configs {
        let costs = NnVariant::ALL
            .iter()
            .map(|&v| cost(&nn_plan(v), &nn_shapes(cfg, v)?, sites))
            .collect::<Result<_>>()?;
        rows.push((name.clone(), costs));
    }
    Ok(Table { corner: "shape".into(), columns: NnVariant::ALL.iter().map(|v| v.name().into()).collect(), rows })
}

pub fn ffnn_table(configs: &[(String, FfnnConfig)], sites: usize) -> Result<Table> {
    let mut rows = Vec::new();
    for (name, cfg) in configs {
        let costs = FfnnVariant::ALL
            .iter()
            .map(|&v| cost(&ffnn_plan(v, cfg.eta), &ffnn_shapes(cfg, v)?, sites))
            .collect::<Result<_>>()?;
        rows.push((name.clone(), costs));
    }
    Ok(Table { corner: "preset".into(), columns: FfnnVariant::ALL.iter().map(|v| v.name().into()).collect(), rows })
}

pub fn table3_configs() -> Vec<(String, MatmulConfig)> {
    table3_presets().into_iter().map(|(n, c)| (n.to_string(), c)).collect()
}

pub fn table5_configs(sites: usize) -> Vec<(String, NnConfig)> {
    vec![("many rows".into(), NnConfig::many_rows(sites)), ("large D".into(), NnConfig::large_d(sites))]
}

pub fn table6_configs() -> Vec<(String, FfnnConfig)> {
    let google = [100_000, 150_000, 200_000].map(|h| (format!("google {}k", h / 1000), FfnnConfig::google(h)));
    let amazon = [1_000, 3_000, 5_000, 7_000].map(|h| (format!("amazon {}k", h / 1000), FfnnConfig::amazon(h)));
    google.into_iter().chain(amazon).collect()
}

/// One executed plan: predicted and measured transfer plus the oracle verdict.
pub struct Check {
    pub plan: String,
    pub predicted: u64,
    pub measured: u64,
    pub error: f64,
    pub pass: bool,
}

pub fn checks_text(rows: &[Check]) -> String {
    let mut s = format!("{:<16}  {:>12}  {:>12}  {:>10}  oracle\n", "plan", "predicted", "measured", "max error");
    for r in rows {
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        s.push_str(&format!("{:<16}  {:>12}  {:>12}  {:>10.2e}  {verdict}\n", r.plan, r.predicted, r.measured, r.error));
    }
    s
}

pub fn checks_csv(rows: &[Check]) -> String {
    let mut s = String::from("plan,predicted,measured,max_error,oracle\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{:e},{}\n", r.plan, r.predicted, r.measured, r.error, if r.pass { "PASS" } else { "FAIL" }));
    }
    s
}

const TOL: f64 = 1e-9;

fn run(name: &str, plan: &IaPlan, catalog: &Catalog, rt: &RuntimeConfig, error: impl Fn(&tra::runtime::RunResult) -> Result<f64>) -> Result<Check> {
    let reg = KernelRegistry::global();
    let predicted = cost_plan(plan, catalog, reg, rt.sites)?.total;
    let result = execute(plan, catalog, reg, rt)?;
    let measured = measure_transfers(&result.trace).1;
    let err = error(&result)?;
    Ok(Check { plan: name.into(), predicted, measured, error: err, pass: err <= TOL && predicted == measured })
}

pub fn matmul_checks(cfg: &MatmulConfig, seed: u64, rt: &RuntimeConfig) -> Result<Vec<Check>> {
    MatmulStrategy::ALL
        .iter()
        .map(|&st| {
            let (c, a, b) = matmul_data(cfg, seed, st.layout())?;
            let want = dense_matmul(&a, &b);
            run(st.name(), &matmul_plan(st, cfg), &c, rt, |r| Ok(unblockify(&r.roots[0].to_logical()?)?.max_abs_diff(&want)))
        })
        .collect()
}

pub fn nn_checks(cfg: &NnConfig, seed: u64, rt: &RuntimeConfig) -> Result<Vec<Check>> {
    let data = nn_data(cfg, seed)?;
    let (row, dist) = nn_oracle(&data);
    NnVariant::ALL
        .iter()
        .map(|&v| {
            let c = nn_catalog(cfg, v, &data)?;
            run(v.name(), &nn_plan(v), &c, rt, |r| {
                let out = r.roots[0].to_logical()?;
                let got = out.tuples().first().map(|t| t.1.values().to_vec()).unwrap_or_default();
                Ok(match got.as_slice() {
                    [d, i] if *i as usize == row => (d - dist).abs() / dist.abs().max(1.0),
                    _ => f64::INFINITY,
                })
            })
        })
        .collect()
}

pub fn ffnn_checks(cfg: &FfnnConfig, seed: u64, rt: &RuntimeConfig) -> Result<Vec<Check>> {
    let data = ffnn_data(cfg, seed)?;
    let (w1, w2) = ffnn_oracle(&data, cfg.eta);
    FfnnVariant::ALL
        .iter()
        .map(|&v| {
            let c = ffnn_catalog(cfg, v, &data)?;
            run(v.name(), &ffnn_plan(v, cfg.eta), &c, rt, |r| {
                let g1 = unblockify(&r.roots[0].to_logical()?)?;
                let g2 = unblockify(&r.roots[1].to_logical()?)?;
                Ok(g1.max_abs_diff(&w1).max(g2.max_abs_diff(&w2)))
            })
        })
        .collect()
}
