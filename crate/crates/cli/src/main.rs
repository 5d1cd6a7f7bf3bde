use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use plap_afem::adapt::{adaptive_loop_with, write_trace_footer, write_trace_row, AdaptiveConfig, Domain, TRACE_HEADER};
use plap_afem::assembly::Source;
use plap_afem::crspace::write_solution_csv;
use plap_afem::mesh::write_plapmesh;
use plap_afem::plap::{DcConfig, DcSolver};
use plap_afem::verify::{run_all, VerifyOptions};

#[derive(Parser, Debug)]
#[command(name = "plap", version, about = "Adaptive CR eigenvalue solver for the p-Laplacian")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Worker threads for element-parallel loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Adaptive loop for the first eigenpair.
    Run(RunArgs),
    /// Torsion problem (f = 1) on the initial mesh.
    Torsion(BvpArgs),
    /// p-Laplace source problem with constant right-hand side on the initial mesh.
    Bvp(BvpArgs),
    /// Built-in oracle checks.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// square | lshape | file:<path>
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    /// Initial resolution (cells per unit length).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eps_n: Option<f64>,
    /// Initial fields of the splitting; overrides PLAP_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; must exist.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key = value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    eps_k: Option<f64>,
    #[arg(long)]
    eps_m: Option<f64>,
    /// Maximal level.
    #[arg(long = "K", visible_alias = "max-level")]
    k: Option<usize>,
    #[arg(long)]
    lambda_ref: Option<f64>,
    /// Record wall-clock seconds in the trace (breaks byte-identical reruns).
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct BvpArgs {
    #[command(flatten)]
    common: Common,
    /// Constant source value.
    #[arg(long)]
    f: Option<f64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, hide = true, default_value_t = 1.0)]
    perturb_jump: f64,
}

const CONFIG_KEYS: &[&str] = &[
    "domain", "p", "n", "eps_n", "seed", "theta", "eps_k", "eps_m", "K", "lambda_ref", "f",
];

/// Values from the optional configuration file.
struct FileConfig(toml::Table);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig(toml::Table::new()));
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        if let Some(key) = table.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            bail!("unknown configuration key `{key}` in {}", path.display());
        }
        Ok(FileConfig(table))
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(v) => bail!("configuration key `{key}` must be a number, got {v}"),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(v) => bail!("configuration key `{key}` must be a nonnegative integer, got {v}"),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => bail!("configuration key `{key}` must be a string, got {v}"),
        }
    }
}

/// Settings shared by every solve, after merging flags, environment and file.
struct Resolved {
    domain: Domain,
    p: f64,
    dc: DcConfig<f64>,
    out: PathBuf,
}

fn parse_domain(s: &str, n: Option<usize>) -> Result<Domain> {
    if let Some(path) = s.strip_prefix("file:") {
        return Ok(Domain::File(PathBuf::from(path)));
    }
    match s {
        "square" => Ok(Domain::Square(n.unwrap_or(12))),
        "lshape" => Ok(Domain::LShape(n.unwrap_or(6))),
        _ => bail!("unknown domain `{s}` (expected square, lshape or file:<path>)"),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("PLAP_SEED") {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("PLAP_SEED={s} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

fn resolve(c: &Common, file: &FileConfig, default_p: f64) -> Result<Resolved> {
    let n = match c.n {
        Some(n) => Some(n),
        None => file.uint("n")?.map(|n| n as usize),
    };
    let domain_name = match &c.domain {
        Some(d) => d.clone(),
        None => file.string("domain")?.unwrap_or_else(|| "square".into()),
    };
    let domain = parse_domain(&domain_name, n)?;
    let p = match c.p {
        Some(p) => p,
        None => file.float("p")?.unwrap_or(default_p),
    };
    let mut dc = DcConfig::default();
    if let Some(e) = c.eps_n.or(file.float("eps_n")?) {
        dc.eps_n = e;
    }
    let seed = match c.seed {
        Some(s) => Some(s),
        None => env_seed()?.or(file.uint("seed")?),
    };
    if let Some(s) = seed {
        dc.seed = s;
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("."));
    if !out.is_dir() {
        bail!("output directory {} does not exist", out.display());
    }
    Ok(Resolved { domain, p, dc, out })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let r = resolve(&args.common, &file, 2.0)?;
    let mut cfg = AdaptiveConfig::new(r.p);
    cfg.iiss.dc = r.dc;
    if let Some(v) = args.theta.or(file.float("theta")?) {
        cfg.theta = v;
    }
    if let Some(v) = args.eps_k.or(file.float("eps_k")?) {
        cfg.eps_k = v;
    }
    if let Some(v) = args.eps_m.or(file.float("eps_m")?) {
        cfg.iiss.eps_m = v;
    }
    if let Some(k) = args.k.or(file.uint("K")?.map(|k| k as usize)) {
        cfg.max_level = k;
    }
    cfg.lambda_ref = args.lambda_ref.or(file.float("lambda_ref")?);
    cfg.validate()?;
    let mesh = r.domain.initial_mesh()?;

    let trace_path = r.out.join("trace.csv");
    let mut trace_file = create(&trace_path)?;
    writeln!(trace_file, "{TRACE_HEADER}")?;
    trace_file.flush()?;
    let result = adaptive_loop_with(mesh, &cfg, |level| {
        let k = level.record.k;
        let mut w = create_core(&r.out.join(format!("mesh_{k}.plapmesh")))?;
        write_plapmesh(level.mesh, &mut w)?;
        w.flush()?;
        let mut w = create_core(&r.out.join(format!("solution_{k}.csv")))?;
        write_solution_csv(level.mesh, &level.pair.u, &mut w)?;
        w.flush()?;
        write_trace_row(&mut trace_file, level.record, args.timing)?;
        trace_file.flush()?;
        log::info!("level {k}: dof {} mu {:.8e}", level.record.dof, level.record.mu);
        Ok(())
    });
    let trace = match result {
        Ok(t) => t,
        Err(e) => {
            trace_file.flush()?;
            return Err(anyhow!(e).context(format!("adaptive loop failed; partial trace in {}", trace_path.display())));
        }
    };
    if let Some(e_mu) = trace.e_mu {
        write_trace_footer(&mut trace_file, e_mu)?;
    }
    trace_file.flush()?;
    let last = trace.last();
    println!("levels {} dof {} mu {:.8e}", trace.records.len(), last.dof, last.mu);
    if let Some(e_mu) = trace.e_mu {
        println!("e_mu {e_mu:.8e}");
    }
    Ok(())
}

fn create_core(path: &Path) -> plap_afem::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_bvp(args: &BvpArgs, torsion: bool) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let r = resolve(&args.common, &file, 2.0)?;
    let f = if torsion {
        1.0
    } else {
        args.f.or(file.float("f")?).unwrap_or(1.0)
    };
    let mesh = r.domain.initial_mesh()?;
    let solver = DcSolver::new(&mesh, r.p, r.dc)?;
    let mut state = solver.initial_state();
    let load = solver.system().load_vector(&mesh, Source::Constant(f));

    let log_path = r.out.join("convergence.csv");
    let mut log_file = create(&log_path)?;
    writeln!(log_file, "iteration,rel_change")?;
    let mut io_err = None;
    let result = solver.solve_observed(&load, &mut state, |n, rel| {
        if io_err.is_none() {
            if let Err(e) = writeln!(log_file, "{n},{rel:.8e}") {
                io_err = Some(e);
            }
        }
    });
    log_file.flush()?;
    if let Some(e) = io_err {
        return Err(e).context(format!("writing {}", log_path.display()));
    }
    result.with_context(|| format!("p-Laplace solve failed; iteration log in {}", log_path.display()))?;

    let u = solver.to_function(&state)?;
    let mut w = create(&r.out.join("solution.csv"))?;
    write_solution_csv(&mesh, &u, &mut w)?;
    w.flush()?;
    println!(
        "iterations {} rel_change {:.8e} optimality_residual {:.8e} splitting_gap {:.8e}",
        state.iterations, state.rel_change, state.optimality_residual, state.splitting_gap
    );
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> bool {
    let results = run_all(&VerifyOptions { jump_scale: args.perturb_jump });
    let mut ok = true;
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} checks passed", results.len() - failed, results.len());
    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Torsion(a) => cmd_bvp(a, true),
        Command::Bvp(a) => cmd_bvp(a, false),
        Command::Verify(a) => {
            return if cmd_verify(a) { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
