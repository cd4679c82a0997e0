//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::corpus::{check_enumerated_spaces, check_every_rule};
use common::props::{case, check_closure, check_concat_tile, tile_case};
use common::suites::{diag_derivation, metering_suite, oracle_suite, OPERATORS};
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use tra::workloads::FfnnConfig;

type Outcome = Result<String, String>;
type Costs = BTreeMap<(String, String), (u64, String)>;

fn tra(args: &[&str]) -> Result<(String, Duration), String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_tra")).args(args).output().map_err(|e| e.to_string())?;
    let took = start.elapsed();
    if !out.status.success() {
        return Err(format!("`tra {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok((String::from_utf8_lossy(&out.stdout).into_owned(), took))
}

/// Runs `tra bench ...` with a CSV destination and returns the CSV text and the
/// wall time.
fn bench(args: &[&str]) -> Result<(String, Duration), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("costs.csv").to_string_lossy().into_owned();
    let mut all = vec!["bench"];
    all.extend(args);
    all.extend(["--csv", &path]);
    let (_, took) = tra(&all)?;
    Ok((fs::read_to_string(&path).map_err(|e| e.to_string())?, took))
}

/// Parses the `row,plan,cost,cost_sci` block into `(row, plan) -> (cost, sci)`.
fn cost_csv(text: &str) -> Result<Costs, String> {
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1).take_while(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let [row, plan, cost, sci] = f[..] else { return Err(format!("bad csv line `{line}`")) };
        let cost = cost.parse().map_err(|_| format!("bad cost in `{line}`"))?;
        out.insert((row.to_string(), plan.to_string()), (cost, sci.to_string()));
    }
    Ok(out)
}

fn lookup<'a>(t: &'a Costs, row: &str, plan: &str) -> Result<&'a (u64, String), String> {
    t.get(&(row.to_string(), plan.to_string())).ok_or_else(|| format!("no cost for {row}/{plan}"))
}

fn matmul_table() -> Outcome {
    let (text, took) = bench(&["matmul", "--preset", "table3", "--sites", "10"])?;
    let t = cost_csv(&text)?;
    let want = [
        ("general", ["1.6e10", "1.6e10", "1.6e10"]),
        ("common large dim", ["6.4e10", "1.0e9", "6.4e10"]),
        ("two large dims", ["8.0e9", "6.4e10", "8.0e9"]),
    ];
    for (row, sci) in want {
        for (plan, w) in ["BMM", "CMM", "RMM"].into_iter().zip(sci) {
            let (_, got) = lookup(&t, row, plan)?;
            if got != w {
                return Err(format!("{row}/{plan}: {got}, expected {w}"));
            }
        }
    }
    if took >= Duration::from_secs(1) {
        return Err(format!("took {took:?}"));
    }
    Ok(format!("nine costs match, {} ms", took.as_millis()))
}

fn ffnn_table() -> Outcome {
    let sites = 5u64;
    let (text, _) = bench(&["ffnn", "--preset", "table6", "--sites", "5"])?;
    let t = cost_csv(&text)?;
    let presets = [("google", [100_000, 150_000, 200_000].as_slice()), ("amazon", [1_000, 3_000, 5_000, 7_000].as_slice())];
    let mut checked = 0;
    for (family, hs) in presets {
        for &h in hs {
            let cfg = if family == "google" { FfnnConfig::google(h) } else { FfnnConfig::amazon(h) };
            let row = format!("{family} {}k", h / 1000);
            let (mp, _) = lookup(&t, &row, "TRA-MP")?;
            let (dp, _) = lookup(&t, &row, "TRA-DP")?;
            let want = 2 * sites * cfg.n as u64 * h as u64;
            if *mp != want {
                return Err(format!("{row}: MP {mp}, expected 2sNH = {want}"));
            }
            let ordered = if family == "google" { dp < mp } else { mp < dp };
            if !ordered {
                return Err(format!("{row}: DP {dp} vs MP {mp} in the wrong order"));
            }
            checked += 1;
        }
    }
    Ok(format!("MP = 2sNH on {checked} presets, DP/MP orderings hold"))
}

fn nn_table() -> Outcome {
    let (text, _) = bench(&["nn", "--preset", "table5", "--sites", "8"])?;
    let t = cost_csv(&text)?;
    let (h_rows, h_rows_sci) = lookup(&t, "many rows", "Opt4Horizontal")?;
    let (v_rows, _) = lookup(&t, "many rows", "Opt4Vertical")?;
    let (h_d, _) = lookup(&t, "large D", "Opt4Horizontal")?;
    let (v_d, v_d_sci) = lookup(&t, "large D", "Opt4Vertical")?;
    if h_rows_sci != "2.9e8" || v_d_sci != "4.8e9" {
        return Err(format!("horizontal {h_rows_sci} (want 2.9e8), vertical {v_d_sci} (want 4.8e9)"));
    }
    if !(h_rows < v_rows && v_d < h_d) {
        return Err(format!("orderings: many rows {h_rows} vs {v_rows}, large D {v_d} vs {h_d}"));
    }
    Ok("2.9e8 and 4.8e9, horizontal wins many rows, vertical wins large D".into())
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let sum = oracle_suite(240)?;
    let took = start.elapsed();
    let missing: Vec<_> = OPERATORS.iter().filter(|o| !sum.operators.contains(*o)).collect();
    if !missing.is_empty() {
        return Err(format!("operators never generated: {missing:?}"));
    }
    if took >= Duration::from_secs(300) {
        return Err(format!("took {took:?}"));
    }
    Ok(format!(
        "{} cases ({} integer, {} non-empty) at s=1..4 over {} operators, {:.1}s",
        sum.cases,
        sum.integer_cases,
        sum.non_empty,
        OPERATORS.len(),
        took.as_secs_f64()
    ))
}

fn rule_soundness() -> Outcome {
    let fired = check_every_rule()?;
    let missing: Vec<_> = fired.iter().filter(|(_, n)| **n == 0).map(|(r, _)| *r).collect();
    if !missing.is_empty() {
        return Err(format!("rules never matched: {missing:?}"));
    }
    let plans = check_enumerated_spaces()?;
    let total: usize = fired.values().sum();
    Ok(format!("{} rules, {total} rewrites checked, {plans} enumerated plans agree", fired.len()))
}

fn diag() -> Outcome {
    let mut notes = Vec::new();
    for sites in [2, 3] {
        let s = diag_derivation(sites, 1)?;
        notes.push(format!(
            "s={sites}: predicted {} -> {}, measured {} -> {} ({} plans)",
            s.initial_cost, s.best_cost, s.initial_measured, s.best_measured, s.plans
        ));
    }
    Ok(format!("fused plan found; {}", notes.join("; ")))
}

fn metering() -> Outcome {
    Ok(format!("{} plans agree node by node at s=1..4", metering_suite(60)?))
}

fn properties() -> Outcome {
    let config = Config { cases: 1000, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new(config.clone());
    runner
        .run(&case(), |(frontier, bound, op, seed)| check_closure(&frontier, &bound, &op, seed).map_err(TestCaseError::fail))
        .map_err(|e| format!("closedness: {e}"))?;
    let mut runner = TestRunner::new(config);
    runner
        .run(&tile_case(), |(frontier, bound, pick, seed)| {
            check_concat_tile(&frontier, &bound, pick, seed).map_err(TestCaseError::fail)
        })
        .map_err(|e| format!("concat after tile: {e}"))?;
    Ok("1000 closedness cases and 1000 concat-after-tile cases".into())
}

fn outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.insert(name, fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let workloads = [("matmul", "CMM"), ("nn", "horizontal"), ("ffnn", "dp"), ("ffnn", "mp"), ("diag", "")];
    for (workload, variant) in workloads {
        let data = tmp.path().join(format!("{workload}-{variant}"));
        let data_s = data.to_string_lossy().into_owned();
        let mut gen = vec!["gen", workload, "--out-dir", &data_s];
        if !variant.is_empty() {
            gen.extend(["--variant", variant]);
        }
        tra(&gen)?;
        let plan = data.join("plan.json").to_string_lossy().into_owned();
        let manifest = data.join("manifest.json").to_string_lossy().into_owned();
        let mut runs = Vec::new();
        for mode in ["threads", "processes"] {
            for round in 0..2 {
                let out = data.join(format!("out-{mode}-{round}"));
                let out_s = out.to_string_lossy().into_owned();
                tra(&["run", &plan, "--sources", &manifest, "--sites", "3", "--mode", mode, "--out-dir", &out_s])?;
                runs.push((mode, outputs(&out)?));
            }
        }
        let names: BTreeSet<&String> = runs[0].1.keys().collect();
        if !names.contains(&"trace.csv".to_string()) || names.len() < 2 {
            return Err(format!("{workload} {variant}: missing outputs {names:?}"));
        }
        for (mode, files) in &runs[1..] {
            if files != &runs[0].1 {
                return Err(format!("{workload} {variant}: {mode} run differs from the first threads run"));
            }
        }
    }
    Ok(format!("{} plans, byte-identical results and traces over 2 thread and 2 process runs", workloads.len()))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("matmul cost table at s=10", matmul_table),
        ("FFNN cost table at s=5", ffnn_table),
        ("nearest-neighbour cost table at s=8", nn_table),
        ("compiled plans match the logical oracle", oracle_equivalence),
        ("every rewrite rule is sound at every position", rule_soundness),
        ("fused diagonal plan derivation", diag),
        ("predicted transfer equals measured transfer", metering),
        ("closedness and concat-after-tile identity", properties),
        ("repeated runs are byte-identical", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
