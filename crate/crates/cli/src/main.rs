use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use offgrid_bench::bench::{format_summary, write_records};
use offgrid_bench::leakage::{ranked_bins, write_leakage};
use offgrid_bench::scenario::StepKind;
use offgrid_bench::{presets, run_benchmark, run_leakage, run_single, summarize, BenchError, BenchOptions, LeakageRequest, Method, Result, Scenario};
use offgrid_sbl::offgrid_refine::trace_csv;

#[derive(Parser)]
#[command(name = "offgrid-sbl", version, about = "Off-grid SBL channel estimation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo comparison of estimators over a scenario sweep.
    Bench(BenchArgs),
    /// One estimation with its per-iteration trace.
    Single(SingleArgs),
    /// DFT leakage profiles of a single ULA path.
    Leakage(LeakageArgs),
    /// Writes a preset scenario (and optionally its array geometry).
    GenScenario(GenArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Built-in preset name (see `gen-scenario --list`).
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<Scenario> {
        match (&self.scenario, &self.preset) {
            (Some(path), _) => Scenario::load(path),
            (None, Some(name)) => presets::load(name),
            (None, None) => Err(BenchError::Usage("pass --scenario or --preset".into())),
        }
    }
}

#[derive(Args)]
struct SweepOverride {
    /// Replace the scenario's pilot lengths.
    #[arg(long, value_delimiter = ',')]
    pilots: Vec<usize>,
    /// Replace the scenario's SNR values (dB).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr_db: Vec<f64>,
    /// Replace the scenario's grid sizes.
    #[arg(long, value_delimiter = ',')]
    grid_size: Vec<usize>,
}

impl SweepOverride {
    fn apply(&self, sc: &mut Scenario) {
        if !self.pilots.is_empty() {
            sc.training.pilots = self.pilots.clone();
        }
        if !self.snr_db.is_empty() {
            sc.training.snr_db = self.snr_db.clone();
        }
        if !self.grid_size.is_empty() {
            sc.training.grid_size = self.grid_size.clone();
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    sweep: SweepOverride,
    /// Comma-separated subset of offgrid, uplink_aided, sbl, odft, dft.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed; per-trial seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, env = "OFFGRID_SBL_THREADS")]
    threads: Option<usize>,
    /// CSV destination; stdout when absent (the summary then goes to stderr).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write zero runtimes so repeated runs produce identical files.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    Fixed,
    LineSearch,
}

#[derive(Args)]
struct SingleArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    sweep: SweepOverride,
    #[arg(long, default_value = "offgrid")]
    method: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Index into the scenario's sweep points.
    #[arg(long, default_value_t = 0)]
    point: usize,
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Override the scenario's angle step rule.
    #[arg(long, value_enum)]
    step_mode: Option<StepArg>,
    /// Trace CSV destination (iteration, evidence, max beta step, active).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct LeakageArgs {
    #[arg(long, default_value_t = 80)]
    antennas: usize,
    #[arg(long, default_value_t = 0.5)]
    d_over_lambda: f64,
    #[arg(long, default_value_t = 5.0198, allow_negative_numbers = true)]
    theta_deg: f64,
    /// Sweep start in degrees; defaults to 10 below the path.
    #[arg(long, allow_negative_numbers = true)]
    from: Option<f64>,
    /// Sweep end in degrees; defaults to 10 above the path.
    #[arg(long, allow_negative_numbers = true)]
    to: Option<f64>,
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// Comma-separated 1-based bins; all bins when absent.
    #[arg(long, value_delimiter = ',')]
    bins: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "fig4b")]
    preset: String,
    /// Print the preset names and exit.
    #[arg(long)]
    list: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the array geometry as `d_n phi_n` lines.
    #[arg(long)]
    geometry: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| BenchError::io(path, e))?))
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut sc = args.source.load()?;
    args.sweep.apply(&mut sc);
    let mut opts = BenchOptions::from_scenario(&sc);
    if let Some(m) = &args.methods {
        opts.methods = Method::parse_list(m)?;
    }
    if let Some(t) = args.trials {
        opts.trials = t;
    }
    if let Some(s) = args.seed {
        opts.seed = s;
    }
    opts.threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    opts.timing = !args.no_timing;

    let records = run_benchmark(&sc, &opts)?;
    let summary = format_summary(&summarize(&records));
    match &args.out {
        Some(path) => {
            write_records(create(path)?, &records)?;
            print!("{summary}");
        }
        None => {
            write_records(io::stdout().lock(), &records)?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn single(args: SingleArgs) -> Result<()> {
    let mut sc = args.source.load()?;
    args.sweep.apply(&mut sc);
    if let Some(s) = args.step_mode {
        sc.estimator.step_mode = match s {
            StepArg::Fixed => StepKind::Fixed,
            StepArg::LineSearch => StepKind::LineSearch,
        };
    }
    let method: Method = args.method.parse()?;
    let seed = args.seed.unwrap_or(sc.run.seed);
    let out = run_single(&sc, method, seed, args.point, args.trial)?;
    println!("method={method} nmse={} iterations={} flags={}", out.nmse, out.iterations, out.flags);
    if let Some(path) = &args.trace {
        if out.trace.is_empty() {
            return Err(BenchError::Usage(format!("{method} has no iteration trace")));
        }
        let mut w = create(path)?;
        w.write_all(trace_csv(&out.trace).as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| BenchError::io(path, e))?;
    }
    Ok(())
}

fn leakage(args: LeakageArgs) -> Result<()> {
    let mut req = LeakageRequest::around(args.antennas, args.d_over_lambda, args.theta_deg);
    if let Some(f) = args.from {
        req.sweep_from_deg = f;
    }
    if let Some(t) = args.to {
        req.sweep_to_deg = t;
    }
    req.sweep_points = args.points;
    req.bins = args.bins;
    let rows = run_leakage(&req)?;
    let top: Vec<String> = ranked_bins(&req)?
        .iter()
        .take(4)
        .map(|(b, m)| format!("{b}:{m:.4}"))
        .collect();
    let note = format!("strongest bins at {} deg: {}\n", args.theta_deg, top.join(" "));
    match &args.out {
        Some(path) => {
            write_leakage(create(path)?, &rows)?;
            print!("{note}");
        }
        None => {
            write_leakage(io::stdout().lock(), &rows)?;
            eprint!("{note}");
        }
    }
    Ok(())
}

fn gen_scenario(args: GenArgs) -> Result<()> {
    if args.list {
        for name in presets::names() {
            let sc = presets::load(name)?;
            println!("{name:<12} {}", sc.description);
        }
        return Ok(());
    }
    let text = presets::text(&args.preset)?;
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| BenchError::io(path, e))?,
        None => print!("{text}"),
    }
    if let Some(path) = &args.geometry {
        let geom = presets::load(&args.preset)?.geometry()?;
        std::fs::write(path, geom.to_text()).map_err(|e| BenchError::io(path, e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Single(a) => single(a),
        Command::Leakage(a) => leakage(a),
        Command::GenScenario(a) => gen_scenario(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(e, BenchError::Scenario { .. } | BenchError::UnknownMethod(_) | BenchError::UnknownPreset(_) | BenchError::Usage(_));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
