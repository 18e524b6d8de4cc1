//! `oscflat` command-line driver.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage or configuration
//! error, 3 numerical failure, 4 I/O or snapshot failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oscflat::bench::{self, Family, KernelParams};
use oscflat::flavor::{self, BeamHamiltonian, BeamState, Ham2, Species};
use oscflat::io::analyze;
use oscflat::io::{load_config, load_resume, read_snapshot, RunConfig};
use oscflat::parallel::{self, AutotuneRequest, WorkerProfile};
use oscflat::solver::{self, Problem, RunOptions, SplitMode, Start};
use oscflat::{Error, Result};

#[derive(Parser)]
#[command(
    name = "oscflat",
    version,
    about = "Collective neutrino flavor evolution in the bulb model"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve from R0 to Rn.
    Run(RunArgs),
    /// Continue a run from its full snapshots.
    Resume {
        #[command(flatten)]
        run: RunArgs,
        /// Mode-1 snapshot files together covering all angle bins.
        #[arg(long, required = true, num_args = 1..)]
        snapshot: Vec<PathBuf>,
    },
    /// Predict throughput over node counts and load ratios.
    Autotune(AutotuneArgs),
    /// Run the kernel microbenchmarks.
    Bench(BenchArgs),
    /// Write CSV grids from a snapshot file.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory for snapshots and the summary.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Compute lanes.
    #[arg(short, long, default_value_t = 1)]
    lanes: usize,
    /// `key=value` assignments applied after the file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seconds a lane waits in a collective before giving up.
    #[arg(long, default_value_t = 600)]
    collective_timeout: u64,
}

#[derive(Args)]
struct AutotuneArgs {
    /// Take the beam count and node range from this configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beams: Option<usize>,
    #[arg(long)]
    min_nodes: Option<usize>,
    #[arg(long)]
    max_nodes: Option<usize>,
    /// Worker on every node as `class:threads[:seconds_per_beam]`; a missing
    /// time is measured with the flavor kernel.
    #[arg(long = "worker", required = true)]
    workers: Vec<String>,
    #[arg(long, default_value = "accel")]
    accel_class: String,
    #[arg(long, default_value_t = 0.1)]
    ratio_min: f64,
    #[arg(long, default_value_t = 4.0)]
    ratio_max: f64,
    #[arg(long, default_value_t = 0.1)]
    ratio_step: f64,
    #[arg(long, default_value_t = 0.05)]
    knee: f64,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Kernel families to run (default: all).
    #[arg(long = "family")]
    families: Vec<String>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    outer: usize,
    #[arg(long, default_value_t = 4096)]
    len: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    threads: usize,
    /// Suite repetitions used to flag noisy kernels.
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Product {
    /// Survival probability per angle and energy bin (mode 1).
    Survival,
    /// Flavor spectra of the first and last record (mode 1).
    Spectra,
    /// Energy-averaged survival per record (mode 2).
    Averages,
}

#[derive(Args)]
struct AnalyzeArgs {
    snapshot: PathBuf,
    #[arg(long, value_enum, default_value = "survival")]
    product: Product,
    /// Beam species for the survival grid.
    #[arg(long, default_value = "nue")]
    species: String,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn prepare(args: &RunArgs) -> Result<(RunConfig, Problem)> {
    let parsed = load_config(&args.config)?;
    let mut config = parsed.config;
    config.apply_overrides(&args.overrides)?;
    log::info!("initializing beams, physics, I/O and matter");
    let problem = Problem::from_config(&config)?;
    Ok((config, problem))
}

fn cmd_run(args: &RunArgs, start: Start) -> Result<()> {
    let (config, problem) = prepare(args)?;
    let lanes = args.lanes.max(1);
    let opts = RunOptions {
        lanes,
        split: SplitMode::from_config(&config, lanes)?,
        dump: (config.dump_mode != 0).then(|| solver::dump_plan(&config, &args.out)),
        collective_timeout: std::time::Duration::from_secs(args.collective_timeout),
    };
    let outcome = solver::run(&problem, &opts, start)?;
    let text = outcome.summary.render();
    write_file(&args.out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn parse_worker(spec: &str) -> Result<(String, usize, Option<f64>)> {
    let bad = || {
        Error::Config(format!(
            "worker {spec:?} is not class:threads[:seconds_per_beam]"
        ))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() < 2 || parts.len() > 3 || parts[0].is_empty() {
        return Err(bad());
    }
    let threads = parts[1].parse().map_err(|_| bad())?;
    let time = parts
        .get(2)
        .map(|t| t.parse::<f64>().map_err(|_| bad()))
        .transpose()?;
    Ok((parts[0].to_string(), threads, time))
}

/// Seconds for one beam (four species) over the four stages of a step.
fn measure_per_beam(ebins: usize) -> f64 {
    let v = vec![0.1; ebins];
    let w = vec![1.0 / ebins as f64; ebins];
    let ham = BeamHamiltonian {
        vac_h11: &v,
        vac_h12: &v,
        shift: Ham2::new(0.3, 0.2, 0.1),
    };
    let mut a = BeamState::new(Species::NuE, ebins);
    let mut b = a.clone();
    let reps = 200;
    let t = Instant::now();
    for _ in 0..reps {
        for _ in 0..4 * 5 {
            let _ = flavor::evolve_sum(&ham, 0.01, &a, &mut b, &w);
            std::mem::swap(&mut a, &mut b);
        }
    }
    std::hint::black_box(&a);
    t.elapsed().as_secs_f64() / reps as f64
}

fn cmd_autotune(args: &AutotuneArgs) -> Result<()> {
    let config = args
        .config
        .as_deref()
        .map(load_config)
        .transpose()?
        .map(|p| p.config);
    let beams = args
        .beams
        .or(config.as_ref().map(|c| c.abins * c.pbins))
        .ok_or_else(|| Error::Config("autotune needs --beams or --config".into()))?;
    let min_nodes = args
        .min_nodes
        .or(config.as_ref().map(|c| c.min_nodes))
        .unwrap_or(1);
    let max_nodes = args
        .max_nodes
        .or(config.as_ref().map(|c| c.max_nodes))
        .unwrap_or(min_nodes);
    let ebins = config.as_ref().map_or(64, |c| c.ebins);
    let mut measured = None;
    let mut node = Vec::new();
    for w in &args.workers {
        let (class, threads, time) = parse_worker(w)?;
        let per_beam_time = match time {
            Some(t) => t,
            None => *measured.get_or_insert_with(|| measure_per_beam(ebins)),
        };
        node.push(WorkerProfile {
            class,
            threads,
            per_beam_time,
        });
    }
    let req = AutotuneRequest {
        total_beams: beams,
        node,
        min_nodes,
        max_nodes,
        ratio_min: args.ratio_min,
        ratio_max: args.ratio_max,
        ratio_step: args.ratio_step,
        accel_class: args.accel_class.clone(),
        knee_threshold: args.knee,
    };
    let report = parallel::autotune(&req)?;
    write_file(&args.out.join("autotune.csv"), &report.to_csv())?;
    for (nodes, ratio, sps) in &report.best_per_nodes {
        println!("nodes= {nodes} best_ratio= {ratio:.2} steps_per_sec= {sps:.6e}");
    }
    match report.knee {
        Some(k) => println!("knee= {k}"),
        None => println!("knee= none"),
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let families = if args.families.is_empty() {
        Family::ALL.to_vec()
    } else {
        args.families
            .iter()
            .map(|f| {
                Family::from_name(f)
                    .ok_or_else(|| Error::Config(format!("unknown kernel family {f:?}")))
            })
            .collect::<Result<_>>()?
    };
    let params = KernelParams {
        vector_width: args.width,
        outer_iters: args.outer,
        array_len: args.len,
        repetitions: args.reps,
        threads: args.threads,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let specs = bench::suite(&families, params);
    let mut runs = Vec::new();
    for _ in 0..args.runs.max(1) {
        runs.push(bench::run_suite(&specs, &args.out)?);
    }
    let last = runs.last().expect("at least one suite run");
    write_file(&args.out.join("bench.csv"), &bench::to_csv(last))?;
    print!("{}", bench::to_csv(last));
    for (name, cov) in bench::noisy_kernels(&runs, 0.25) {
        log::warn!(
            "{name} is noisy: coefficient of variation {cov:.2} across {} suite runs",
            runs.len()
        );
    }
    if let Some(r) = bench::ratio(last, bench::Variant::Aos, bench::Variant::Soa) {
        println!("aos_over_soa= {r:.3}");
    }
    if let Some(r) = bench::ratio(last, bench::Variant::PerElement, bench::Variant::Buffered) {
        println!("per_element_over_buffered= {r:.3}");
    }
    if let Some(r) = bench::ratio(last, bench::Variant::Unfused, bench::Variant::Fused) {
        println!("unfused_over_fused= {r:.3}");
    }
    if let Some(bad) = last.iter().find(|r| !r.checksum_ok) {
        return Err(Error::Numeric(format!(
            "{}: checksum {} does not match the reference {}",
            bad.spec.name, bad.checksum, bad.reference
        )));
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let data = read_snapshot(&args.snapshot)?;
    let (name, text) = match args.product {
        Product::Survival => {
            let s = Species::from_name(&args.species)
                .ok_or_else(|| Error::Config(format!("unknown species {:?}", args.species)))?;
            (
                format!("survival_{}.csv", s.name()),
                analyze::survival_csv(&data, s)?,
            )
        }
        Product::Spectra => ("spectra.csv".to_string(), analyze::spectra_csv(&data)?),
        Product::Averages => ("averages.csv".to_string(), analyze::averages_csv(&data)?),
    };
    let path = args.out.join(name);
    write_file(&path, &text)?;
    println!("{}", path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, Start::Fresh),
        Command::Resume { run, snapshot } => {
            let point = load_resume(snapshot)?;
            cmd_run(run, Start::Resume(std::sync::Arc::new(point)))
        }
        Command::Autotune(a) => cmd_autotune(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
