//! `tra`: compile, optimize, run and validate tensor relational plans, and
//! reproduce the workload cost tables.

mod bench;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;
use tra::compiler::compile;
use tra::format::write_relation;
use tra::plan::IaPlan;
use tra::rewrite::{select_best, Budget, Optimizer, Rule};
use tra::runtime::{execute, measure_transfers, Mode, RuntimeConfig};
use tra::tra::{eval_expr, Catalog, TraExpr};
use tra::workloads::*;
use tra::{Error, KernelRegistry, TensorRelation};

#[derive(Parser)]
#[command(name = "tra", version, about = "Tensor relational algebra engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a TRA expression file into an IA plan file.
    Compile {
        expr: PathBuf,
        #[arg(long)]
        sources: PathBuf,
        /// Output plan file; the plan is explained on stdout otherwise.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Enumerate equivalent plans and pick the cheapest.
    Optimize {
        plan: PathBuf,
        #[arg(long)]
        sources: PathBuf,
        #[arg(long, default_value_t = 2)]
        sites: usize,
        /// Comma-separated rule names (R1-1 ... R2-7, BMM, CMM, RMM); all by default.
        #[arg(long, value_delimiter = ',')]
        rules: Vec<String>,
        #[arg(long, default_value_t = 10_000)]
        max_plans: usize,
        #[arg(long, default_value_t = 12)]
        max_depth: usize,
        /// Fire two-phase aggregation when the shuffle keys are a subset of the grouping keys.
        #[arg(long)]
        two_phase_complement: bool,
        /// Rows of the plan-space table to print.
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the chosen plan here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Execute a plan and write its results and trace.
    Run {
        plan: PathBuf,
        #[arg(long)]
        sources: PathBuf,
        #[arg(long, default_value_t = 2)]
        sites: usize,
        #[command(flatten)]
        exec: ExecArgs,
        /// Directory for `result.rel` (or `result-<i>.rel` per root) and `trace.csv`.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check compiled (and optionally optimized) plans against logical evaluation.
    Validate {
        /// TRA expression file; omit with `--example`.
        expr: Option<PathBuf>,
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long, value_enum)]
        example: Option<Example>,
        #[arg(long, default_value_t = 2)]
        sites: usize,
        #[command(flatten)]
        exec: ExecArgs,
        /// Also validate the optimizer's chosen plan.
        #[arg(long)]
        optimize: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Cost tables for a workload and, at desk scale, oracle-checked runs.
    Bench {
        #[arg(value_enum)]
        workload: Workload,
        /// Named configuration; defaults to the full-scale table for the workload.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Custom dimensions: I,K,J (matmul), N,D (nn) or N,D,H,L (ffnn).
        #[arg(long, value_delimiter = ',')]
        shape: Vec<usize>,
        /// Block counts per dimension, in the same order as `--shape`.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        sites: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        exec: ExecArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a desk-scale workload's data, manifest and plan files.
    Gen {
        #[arg(value_enum)]
        workload: Workload,
        /// Plan variant: BMM/CMM/RMM, horizontal/vertical or dp/mp.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        coordinator: String,
        #[arg(long)]
        site: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
    },
}

#[derive(Args, Clone)]
struct ExecArgs {
    #[arg(long, default_value = "threads")]
    mode: Mode,
    /// Coordinator port in process mode; 0 picks a free port.
    #[arg(long, default_value_t = 0)]
    port: u16,
    /// Tuples per message.
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Check uniqueness and continuity of every result.
    #[arg(long)]
    check_constraints: bool,
}

impl ExecArgs {
    fn config(&self, sites: usize) -> RuntimeConfig {
        let base = match self.mode {
            Mode::Threads => RuntimeConfig::threads(sites),
            Mode::Processes => RuntimeConfig::processes(sites, None),
        };
        RuntimeConfig { port_base: self.port, batch: self.batch.max(1), validate: self.check_constraints, ..base }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Workload {
    Matmul,
    Nn,
    Ffnn,
    Diag,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Table3,
    Table5,
    Table6,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    Diag,
    Matmul,
}

/// Failures mapped to exit statuses: 1 usage, 2 validation, 3 execution.
enum Failure {
    Usage(String),
    Validation(String),
    Execution(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Format(_) | Error::Io(_) => Failure::Usage(e.to_string()),
            Error::Execution { .. } | Error::Ambiguity(_) | Error::Constraint { .. } => Failure::Execution(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn read_json(path: &Path) -> std::result::Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &Value) -> CmdResult {
    fs::write(path, serde_json::to_string_pretty(v).expect("json values serialize") + "\n")?;
    Ok(())
}

fn load_sources(path: &Path) -> std::result::Result<Catalog, Failure> {
    manifest::load(path).map_err(|e| match e {
        Error::Format(_) | Error::Io(_) => Failure::Usage(format!("{}: {e}", path.display())),
        other => other.into(),
    })
}

fn parse_rules(names: &[String]) -> std::result::Result<Vec<Rule>, Failure> {
    if names.is_empty() {
        return Ok(Rule::all());
    }
    names.iter().map(|n| Rule::parse(n).ok_or_else(|| Failure::Usage(format!("unknown rule `{n}`")))).collect()
}

fn cmd_compile(expr: &Path, sources: &Path, out: Option<&Path>) -> CmdResult {
    let expr = TraExpr::from_json(&read_json(expr)?).map_err(|e| Failure::Usage(e.to_string()))?;
    let catalog = load_sources(sources)?;
    let plan = compile(&expr, &catalog, KernelRegistry::global())?;
    match out {
        Some(p) => write_json(p, &plan.to_json()),
        None => {
            print!("{}", plan.explain(None));
            Ok(())
        }
    }
}

fn read_plan(path: &Path) -> std::result::Result<IaPlan, Failure> {
    IaPlan::from_json(&read_json(path)?).map_err(|e| Failure::Usage(e.to_string()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    plan: &Path,
    sources: &Path,
    sites: usize,
    rules: &[String],
    budget: Budget,
    complement: bool,
    top: usize,
    csv: Option<&Path>,
    out: Option<&Path>,
) -> CmdResult {
    let plan = read_plan(plan)?;
    let catalog = load_sources(sources)?;
    let rules = parse_rules(rules)?;
    let opt = Optimizer { two_phase_complement: complement, ..Optimizer::new(&catalog, KernelRegistry::global(), sites) };
    let space = opt.enumerate(&plan, &rules, budget)?;
    print!("{}", space.to_text(top));
    if space.truncated {
        println!("(search stopped at {} plans)", space.len());
    }
    if let Some(p) = csv {
        fs::write(p, space.to_csv())?;
    }
    let best = select_best(&space).expect("the space holds the input plan");
    println!("\nchosen plan (cost {}, {} nodes):\n{}", best.cost, best.nodes, best.plan.explain(None));
    if let Some(p) = out {
        write_json(p, &best.plan.to_json())?;
    }
    Ok(())
}

fn cmd_run(plan: &Path, sources: &Path, sites: usize, exec: &ExecArgs, out_dir: &Path) -> CmdResult {
    let plan = read_plan(plan)?;
    let catalog = load_sources(sources)?;
    let result = execute(&plan, &catalog, KernelRegistry::global(), &exec.config(sites))?;
    fs::create_dir_all(out_dir)?;
    let single = result.roots.len() == 1;
    for (i, root) in result.roots.iter().enumerate() {
        let name = if single { "result.rel".to_string() } else { format!("result-{i}.rel") };
        fs::write(out_dir.join(name), write_relation(&root.to_logical()?))?;
    }
    fs::write(out_dir.join("trace.csv"), result.trace.to_csv())?;
    let (_, total) = measure_transfers(&result.trace);
    println!(
        "{} root(s), {} floats transferred, {:.3}s on {} sites",
        result.roots.len(),
        total,
        result.trace.elapsed.as_secs_f64(),
        sites
    );
    Ok(())
}

fn compare(got: &TensorRelation, want: &TensorRelation, exact: bool) -> std::result::Result<(), String> {
    if got.key_arity() != want.key_arity() || got.array_type() != want.array_type() || got.len() != want.len() {
        return Err(format!("shape differs: {} tuples of {} vs {} of {}", got.len(), got.array_type(), want.len(), want.array_type()));
    }
    for ((kg, ag), (kw, aw)) in got.tuples().iter().zip(want.tuples()) {
        if kg != kw {
            return Err(format!("key {kg:?} where {kw:?} was expected"));
        }
        let ok = if exact { ag.bit_eq(aw) } else { ag.max_abs_diff(aw) <= 1e-9 };
        if !ok {
            return Err(format!("arrays differ at key {kg:?}"));
        }
    }
    Ok(())
}

fn cmd_validate(
    expr: Option<&Path>,
    sources: Option<&Path>,
    example: Option<Example>,
    sites: usize,
    exec: &ExecArgs,
    optimize: bool,
    seed: u64,
) -> CmdResult {
    let reg = KernelRegistry::global();
    let (expr, catalog, extra) = match (example, expr, sources) {
        (Some(Example::Diag), None, None) => {
            let (c, x, y) = diag_data(4, 2, seed)?;
            (diag_expr(), c, Some(diag_oracle(&x, &y, 2)?))
        }
        (Some(Example::Matmul), None, None) => {
            let cfg = MatmulConfig::desk();
            let (c, _, _) = matmul_data(&cfg, seed, MatmulStrategy::Cmm.layout())?;
            (matmul_expr(), c, None)
        }
        (None, Some(e), Some(s)) => {
            let expr = TraExpr::from_json(&read_json(e)?).map_err(|e| Failure::Usage(e.to_string()))?;
            (expr, load_sources(s)?, None)
        }
        _ => return Err(Failure::Usage("validate needs either EXPR with --sources or --example".into())),
    };
    let exact = manifest::integer_valued(&catalog);
    let want = eval_expr(&expr, &catalog, reg)?;
    let mut plans = vec![("compiled", compile(&expr, &catalog, reg)?)];
    if optimize {
        let opt = Optimizer::new(&catalog, reg, sites);
        let space = opt.enumerate(&plans[0].1, &Rule::all(), Budget::default())?;
        plans.push(("optimized", select_best(&space).expect("non-empty space").plan.clone()));
    }
    let mut failed = false;
    if let Some(oracle) = &extra {
        let verdict = compare(&want, oracle, exact);
        failed |= verdict.is_err();
        report("logical vs dense oracle", verdict);
    }
    for (name, plan) in &plans {
        let run = execute(plan, &catalog, reg, &exec.config(sites))?;
        let got = run.roots[0].to_logical()?;
        let verdict = compare(&got, &want, exact);
        failed |= verdict.is_err();
        report(&format!("{name} plan on {sites} sites ({} floats moved)", measure_transfers(&run.trace).1), verdict);
    }
    if failed {
        Err(Failure::Validation("validation failed".into()))
    } else {
        Ok(())
    }
}

fn report(what: &str, verdict: std::result::Result<(), String>) {
    match verdict {
        Ok(()) => println!("PASS {what}"),
        Err(msg) => println!("FAIL {what}: {msg}"),
    }
}

struct BenchArgs<'a> {
    workload: Workload,
    preset: Option<Preset>,
    shape: &'a [usize],
    grid: &'a [usize],
    eta: Option<f64>,
    sites: Option<usize>,
    seed: u64,
    exec: &'a ExecArgs,
    csv: Option<&'a Path>,
}

fn custom<const N: usize>(shape: &[usize], grid: &[usize], what: &str) -> std::result::Result<([usize; N], [usize; N]), Failure> {
    let s: [usize; N] = shape.try_into().map_err(|_| Failure::Usage(format!("{what} takes --shape with {N} values")))?;
    let g: [usize; N] = grid.try_into().map_err(|_| Failure::Usage(format!("{what} takes --grid with {N} values")))?;
    Ok((s, g))
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    use bench::*;
    let mut csv = String::new();
    let mut checks = Vec::new();
    let desk = matches!(a.preset, Some(Preset::Desk));
    let custom_shape = !a.shape.is_empty();
    match a.workload {
        Workload::Matmul => {
            let sites = a.sites.unwrap_or(if desk || custom_shape { 2 } else { 10 });
            let cfg = if custom_shape {
                let ([i, k, j], [nbi, nbk, nbj]) = custom::<3>(a.shape, a.grid, "matmul")?;
                Some(MatmulConfig { i, k, j, nbi, nbk, nbj })
            } else if desk {
                Some(MatmulConfig::desk())
            } else {
                None
            };
            let configs = match cfg {
                Some(c) => vec![(format!("{}x{}x{}", c.i, c.k, c.j), c)],
                None => match a.preset {
                    None | Some(Preset::Table3) => table3_configs(),
                    _ => return Err(Failure::Usage("matmul presets are table3 and desk".into())),
                },
            };
            let t = matmul_table(&configs, sites)?;
            print!("{}", t.text());
            csv.push_str(&t.csv());
            if let Some(c) = cfg.filter(|c| c.i * c.k + c.k * c.j <= DESK_FLOATS) {
                checks = matmul_checks(&c, a.seed, &a.exec.config(sites))?;
            }
        }
        Workload::Nn => {
            let sites = a.sites.unwrap_or(if desk || custom_shape { 2 } else { 8 });
            let cfg = if custom_shape {
                let ([n, d], [row_blocks, col_blocks]) = custom::<2>(a.shape, a.grid, "nn")?;
                Some(NnConfig { n, d, row_blocks, col_blocks })
            } else if desk {
                Some(NnConfig::desk())
            } else {
                None
            };
            let configs = match cfg {
                Some(c) => vec![(format!("N={} D={}", c.n, c.d), c)],
                None => match a.preset {
                    None | Some(Preset::Table5) => table5_configs(sites),
                    _ => return Err(Failure::Usage("nn presets are table5 and desk".into())),
                },
            };
            let t = nn_table(&configs, sites)?;
            print!("{}", t.text());
            csv.push_str(&t.csv());
            if let Some(c) = cfg.filter(|c| c.n * c.d + c.d * c.d <= DESK_FLOATS) {
                checks = nn_checks(&c, a.seed, &a.exec.config(sites))?;
            }
        }
        Workload::Ffnn => {
            let sites = a.sites.unwrap_or(if desk || custom_shape { 2 } else { 5 });
            let mut cfg = if custom_shape {
                let ([n, d, h, l], [n_blocks, d_blocks, h_blocks, l_blocks]) = custom::<4>(a.shape, a.grid, "ffnn")?;
                Some(FfnnConfig { n, d, h, l, eta: 0.1, n_blocks, d_blocks, h_blocks, l_blocks })
            } else if desk {
                Some(FfnnConfig::desk())
            } else {
                None
            };
            if let (Some(c), Some(eta)) = (cfg.as_mut(), a.eta) {
                c.eta = eta;
            }
            let configs = match cfg {
                Some(c) => vec![(format!("N={} D={} H={} L={}", c.n, c.d, c.h, c.l), c)],
                None => match a.preset {
                    None | Some(Preset::Table6) => table6_configs(),
                    _ => return Err(Failure::Usage("ffnn presets are table6 and desk".into())),
                },
            };
            let t = ffnn_table(&configs, sites)?;
            print!("{}", t.text());
            csv.push_str(&t.csv());
            if let Some(c) = cfg.filter(|c| c.n * (c.d + c.l) + c.weight_floats() as usize <= DESK_FLOATS) {
                checks = ffnn_checks(&c, a.seed, &a.exec.config(sites))?;
            }
        }
        Workload::Diag => return Err(Failure::Usage("use `validate --example diag` for the diag pipeline".into())),
    }
    if !checks.is_empty() {
        println!();
        print!("{}", checks_text(&checks));
        csv.push('\n');
        csv.push_str(&checks_csv(&checks));
    }
    if let Some(p) = a.csv {
        fs::write(p, csv)?;
    }
    if checks.iter().any(|c| !c.pass) {
        return Err(Failure::Validation("a desk-scale run disagreed with its oracle".into()));
    }
    Ok(())
}

fn cmd_gen(workload: Workload, variant: Option<&str>, seed: u64, out_dir: &Path) -> CmdResult {
    let pick = |names: &[&str]| -> std::result::Result<usize, Failure> {
        match variant {
            None => Ok(0),
            Some(v) => names
                .iter()
                .position(|n| n.eq_ignore_ascii_case(v))
                .ok_or_else(|| Failure::Usage(format!("variant must be one of {}", names.join(", ")))),
        }
    };
    let (catalog, plan, expr) = match workload {
        Workload::Matmul => {
            let st = MatmulStrategy::ALL[pick(&["bmm", "cmm", "rmm"])?];
            let cfg = MatmulConfig::desk();
            (matmul_data(&cfg, seed, st.layout())?.0, matmul_plan(st, &cfg), Some(matmul_expr()))
        }
        Workload::Nn => {
            let v = NnVariant::ALL[pick(&["horizontal", "vertical"])?];
            let cfg = NnConfig::desk();
            (nn_catalog(&cfg, v, &nn_data(&cfg, seed)?)?, nn_plan(v), None)
        }
        Workload::Ffnn => {
            let v = FfnnVariant::ALL[pick(&["dp", "mp"])?];
            let cfg = FfnnConfig::desk();
            (ffnn_catalog(&cfg, v, &ffnn_data(&cfg, seed)?)?, ffnn_plan(v, cfg.eta), None)
        }
        Workload::Diag => {
            let (c, _, _) = diag_data(4, 2, seed)?;
            let plan = compile(&diag_expr(), &c, KernelRegistry::global())?;
            (c, plan, Some(diag_expr()))
        }
    };
    let manifest_path = manifest::save(&catalog, out_dir)?;
    write_json(&out_dir.join("plan.json"), &plan.to_json())?;
    if let Some(e) = expr {
        write_json(&out_dir.join("expr.json"), &e.to_json())?;
    }
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Compile { expr, sources, out } => cmd_compile(&expr, &sources, out.as_deref()),
        Command::Optimize { plan, sources, sites, rules, max_plans, max_depth, two_phase_complement, top, csv, out } => cmd_optimize(
            &plan,
            &sources,
            sites,
            &rules,
            Budget { max_plans, max_depth },
            two_phase_complement,
            top,
            csv.as_deref(),
            out.as_deref(),
        ),
        Command::Run { plan, sources, sites, exec, out_dir } => cmd_run(&plan, &sources, sites, &exec, &out_dir),
        Command::Validate { expr, sources, example, sites, exec, optimize, seed } => {
            cmd_validate(expr.as_deref(), sources.as_deref(), example, sites, &exec, optimize, seed)
        }
        Command::Bench { workload, preset, shape, grid, eta, sites, seed, exec, csv } => cmd_bench(BenchArgs {
            workload,
            preset,
            shape: &shape,
            grid: &grid,
            eta,
            sites,
            seed,
            exec: &exec,
            csv: csv.as_deref(),
        }),
        Command::Gen { workload, variant, seed, out_dir } => cmd_gen(workload, variant.as_deref(), seed, &out_dir),
        Command::Worker { coordinator, site, batch } => {
            tra::runtime::worker_main(&coordinator, site, batch).map_err(|e| Failure::Execution(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (1, m),
                Failure::Validation(m) => (2, m),
                Failure::Execution(m) => (3, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
