use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use hydrocouple::analysis::{self, log_space, LinearModelParams, SweepSpec};
use hydrocouple::coupling::{self, time_averaged_cr};
use hydrocouple::linear1d::{self, LinearRun};
use hydrocouple::scenarios::{self, ScenarioConfig};
use hydrocouple::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "hydrocouple", version, about = "Partitioned surface-subsurface coupling: analysis and simulation")]
struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps and scenario batches (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convergence factor S and ω_opt of the linear model over a parameter grid.
    Analyze {
        #[command(subcommand)]
        mode: AnalyzeMode,
    },
    /// Run the linear 1D-0D coupling iteration and compare with the analysis.
    Linrun(LinrunArgs),
    /// Run coupled nonlinear scenarios (presets and/or config files).
    Simulate(SimulateArgs),
    /// List the scenario presets, or print one as TOML.
    Presets {
        /// Print this preset as a config file.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum AnalyzeMode {
    /// Sweep c and K (log-spaced, same range for both).
    Physics {
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, default_value_t = 0.05)]
        dz: f64,
        #[arg(long, default_value_t = 1.0)]
        depth: f64,
        #[arg(long, default_value_t = 25)]
        points: usize,
        #[arg(long, default_value_t = 1e-3)]
        lo: f64,
        #[arg(long, default_value_t = 1e3)]
        hi: f64,
    },
    /// Sweep dt (log-spaced) and the element count M (dz = depth/M).
    Grids {
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, default_value_t = 1.0)]
        depth: f64,
        #[arg(long, default_value_t = 25)]
        points: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt_lo: f64,
        #[arg(long, default_value_t = 1.0)]
        dt_hi: f64,
        #[arg(long, default_value_t = 2)]
        m_lo: usize,
        #[arg(long, default_value_t = 1000)]
        m_hi: usize,
    },
    /// A single parameter point.
    Point {
        #[arg(long)]
        c: f64,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        dt: f64,
        #[command(flatten)]
        mesh: Mesh,
        #[arg(long, default_value_t = 1.0)]
        depth: f64,
    },
}

#[derive(Args, Debug, Clone, Copy)]
#[group(required = true, multiple = false)]
struct Mesh {
    /// Mesh width; must divide the depth.
    #[arg(long)]
    dz: Option<f64>,
    /// Number of elements.
    #[arg(long)]
    elements: Option<usize>,
}

#[derive(Args, Debug)]
struct LinrunArgs {
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    #[arg(long, default_value_t = 1.0)]
    depth: f64,
    /// Time step(s), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    dt: Vec<f64>,
    #[command(flatten)]
    mesh: Mesh,
    /// Relaxation parameter(s), comma separated; `opt` selects ω_opt.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    omega: Vec<String>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = linear1d::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Number of time steps (T = steps·dt).
    #[arg(long, default_value_t = 1)]
    steps: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Preset names.
    presets: Vec<String>,
    /// Scenario config files (TOML).
    #[arg(long)]
    config: Vec<PathBuf>,
    /// `key=value` override applied to every scenario (dotted keys, TOML values).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Leave steps with CR_n above this value out of the time average.
    #[arg(long)]
    cr_exclude_threshold: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() || matches!(e.root(), Error::InvalidParameter(_) | Error::Io(_)) {
        2
    } else if e.is_divergence() {
        3
    } else {
        4
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Presets { show: None } => {
            for name in scenarios::PRESETS {
                println!("{name}");
            }
            Ok(())
        }
        Command::Presets { show: Some(name) } => {
            print!("{}", scenarios::preset(&name)?.to_toml()?);
            Ok(())
        }
        Command::Analyze { mode } => cmd_analyze(&cli.out, mode),
        Command::Linrun(args) => cmd_linrun(&cli.out, args),
        Command::Simulate(args) => cmd_simulate(&cli.out, args),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn params(c: f64, k: f64, depth: f64, dt: f64, mesh: Mesh, omega: f64) -> Result<LinearModelParams> {
    match (mesh.dz, mesh.elements) {
        (Some(dz), None) => LinearModelParams::with_spacing(c, k, depth, dt, dz, omega),
        (None, Some(m)) => LinearModelParams::new(c, k, depth, dt, m, omega),
        _ => Err(Error::Config("give exactly one of --dz and --elements".into())),
    }
}

fn cmd_analyze(out: &Path, mode: AnalyzeMode) -> Result<()> {
    let spec = match mode {
        AnalyzeMode::Physics {
            dt,
            dz,
            depth,
            points,
            lo,
            hi,
        } => {
            check_range(lo, hi, points)?;
            SweepSpec::Physics {
                c: log_space(lo, hi, points),
                k: log_space(lo, hi, points),
                dt,
                dz,
                depth,
            }
        }
        AnalyzeMode::Grids {
            c,
            k,
            depth,
            points,
            dt_lo,
            dt_hi,
            m_lo,
            m_hi,
        } => {
            check_range(dt_lo, dt_hi, points)?;
            if !(m_lo >= 2 && m_hi >= m_lo) {
                return Err(Error::Config("element range needs 2 <= m_lo <= m_hi".into()));
            }
            let mut ms: Vec<usize> = log_space(m_lo as f64, m_hi as f64, points)
                .into_iter()
                .map(|m| m.round() as usize)
                .collect();
            ms.dedup();
            SweepSpec::Grids {
                dt: log_space(dt_lo, dt_hi, points),
                dz: ms.into_iter().map(|m| depth / m as f64).collect(),
                c,
                k,
                depth,
            }
        }
        AnalyzeMode::Point {
            c,
            k,
            dt,
            mesh,
            depth,
        } => {
            let p = params(c, k, depth, dt, mesh, 1.0)?;
            SweepSpec::Physics {
                c: vec![c],
                k: vec![k],
                dt,
                dz: p.dz,
                depth,
            }
        }
    };
    let rows = analysis::sweep(&spec)?;
    analysis::write_sweep_csv(create(out, "analyze.csv")?, &rows)?;
    let abs: Vec<f64> = rows.iter().map(|r| r.result.s.abs()).collect();
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = abs.iter().copied().fold(0.0, f64::max);
    let negative = rows.iter().filter(|r| r.result.s < 0.0).count();
    println!("{} points, |S| in [{min:.3e}, {max:.3e}], S < 0 at {negative}", rows.len());
    Ok(())
}

fn check_range(lo: f64, hi: f64, points: usize) -> Result<()> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite() && points >= 1) {
        return Err(Error::Config(format!("invalid range [{lo}, {hi}] with {points} points")));
    }
    Ok(())
}

struct LinrunCase {
    dt: f64,
    dz: f64,
    omega: f64,
    run: LinearRun,
}

fn cmd_linrun(out: &Path, args: LinrunArgs) -> Result<()> {
    let mut requests = Vec::new();
    for &dt in &args.dt {
        for w in &args.omega {
            let base = params(args.c, args.k, args.depth, dt, args.mesh, 1.0)?;
            let omega = if w.trim().eq_ignore_ascii_case("opt") {
                analysis::discrete_s(&base)?.omega_opt
            } else {
                w.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("omega '{w}' is neither a number nor 'opt'")))?
            };
            let p = LinearModelParams { omega, ..base };
            p.validate()?;
            requests.push(p);
        }
    }
    let cases: Vec<LinrunCase> = requests
        .into_par_iter()
        .map(|p| {
            Ok(LinrunCase {
                dt: p.dt,
                dz: p.dz,
                omega: p.omega,
                run: linear1d::run(p, args.steps, args.tol, args.max_iters)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut overview = csv::Writer::from_writer(create(out, "linrun_overview.csv")?);
    overview.write_record([
        "run", "dt", "dz", "omega", "K_1", "CR_1", "S", "abs_S", "sigma_omega", "abs_CR_minus_abs_S", "abs_CR_minus_abs_sigma",
    ])?;
    let mut diverged = None;
    for (i, case) in cases.iter().enumerate() {
        let run = &case.run;
        linear1d::write_trace_csv(create(out, &format!("linrun_{i}_trace.csv"))?, run)?;
        linear1d::write_summary_csv(create(out, &format!("linrun_{i}_summary.csv"))?, run)?;
        let first = run.traces.first();
        let cr = first.and_then(|t| t.cr());
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.16e}"));
        overview.write_record([
            i.to_string(),
            format!("{:.16e}", case.dt),
            format!("{:.16e}", case.dz),
            format!("{:.16e}", case.omega),
            first.map_or(0, |t| t.iterations()).to_string(),
            fmt(cr),
            format!("{:.16e}", run.s),
            format!("{:.16e}", run.s.abs()),
            format!("{:.16e}", run.sigma),
            fmt(cr.map(|c| (c - run.s.abs()).abs())),
            fmt(cr.map(|c| (c - run.sigma.abs()).abs())),
        ])?;
        println!(
            "run {i}: dt={:e} omega={:.6} K_1={} CR_1={} |S|={:.6e} |Sigma|={:.6e}",
            case.dt,
            case.omega,
            first.map_or(0, |t| t.iterations()),
            fmt(cr),
            run.s.abs(),
            run.sigma.abs()
        );
        if diverged.is_none() {
            if let Some((step, res)) = &run.diverged {
                diverged = Some(Error::Diverged {
                    step: *step,
                    residuals: res.clone(),
                });
            }
        }
    }
    overview.flush()?;
    diverged.map_or(Ok(()), Err)
}

fn cmd_simulate(out: &Path, args: SimulateArgs) -> Result<()> {
    let mut configs = Vec::new();
    for name in &args.presets {
        configs.push(scenarios::preset(name)?);
    }
    for path in &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        configs.push(ScenarioConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?);
    }
    if configs.is_empty() {
        return Err(Error::Config("no scenario given (preset names or --config)".into()));
    }
    if let Some(x) = args.cr_exclude_threshold {
        if !(x > 0.0) {
            return Err(Error::Config("--cr-exclude-threshold must be positive".into()));
        }
    }
    let configs: Vec<ScenarioConfig> = configs
        .iter()
        .map(|c| {
            let c = c.with_overrides(&args.overrides)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut names: Vec<&str> = configs.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("scenario names must be unique".into()));
    }
    fs::create_dir_all(out)?;

    let mut results: Vec<(String, Result<CrTotals>)> = configs
        .par_iter()
        .map(|cfg| (cfg.name.clone(), simulate_one(out, cfg, args.cr_exclude_threshold)))
        .collect();
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let mut summary = csv::Writer::from_writer(create(out, "summary.csv")?);
    summary.write_record(["scenario", "CR", "undefined_count", "excluded_count"])?;
    let mut first_error = None;
    for (name, res) in results {
        match res {
            Ok((cr, undefined, excluded)) => {
                let cr = cr.map_or_else(|| "NA".to_string(), |v| format!("{v:.16e}"));
                println!("{name}: CR = {cr}, undefined = {undefined}, excluded = {excluded}");
                summary.write_record([name, cr, undefined.to_string(), excluded.to_string()])?;
            }
            Err(e) => {
                eprintln!("{name}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    summary.flush()?;
    first_error.map_or(Ok(()), Err)
}

/// Time-averaged CR with undefined and excluded step counts.
type CrTotals = (Option<f64>, usize, usize);

/// Runs one scenario and writes its trace, probe and field CSVs. Partial
/// output is written before a failure is returned.
fn simulate_one(out: &Path, cfg: &ScenarioConfig, exclude: Option<f64>) -> Result<CrTotals> {
    let (model, state) = cfg.build()?;
    info!("running {} ({} steps of {} s)", cfg.name, cfg.coupling.n_steps, cfg.coupling.dt);
    let sim = model.run(state);
    let name = &cfg.name;
    coupling::write_trace_csv(create(out, &format!("{name}_trace.csv"))?, &sim.records)?;
    coupling::write_probe_csv(create(out, &format!("{name}_probe.csv"))?, &sim.probes)?;
    for snap in &sim.snapshots {
        let step = (snap.t / cfg.coupling.dt).round() as usize;
        model
            .richards
            .write_field_csv(create(out, &format!("{name}_field_{step:06}.csv"))?, snap)?;
    }
    if let Some(e) = sim.failure {
        return Err(e);
    }
    let s = time_averaged_cr(&sim.records, exclude);
    Ok((s.mean, s.undefined, s.excluded))
}
