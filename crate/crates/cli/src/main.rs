use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use phdnet::experiment::{compare_algorithms, run_experiment, track, write_outputs, Algorithm, ExperimentConfig};
use phdnet::metrics::{ospa, time_averaged};
use phdnet::scenario::{
    generate_ground_truth, generate_measurement_stream, read_measurements, read_truth, write_estimates, write_measurements,
    write_truth, Scenario,
};
use phdnet::seed::SeedTree;

#[derive(Parser)]
#[command(name = "phdnet", version, about = "Distributed GM-PHD tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo campaigns, one per alpha value.
    Run(RunArgs),
    /// Run several algorithms on the same seeds and compare them pairwise.
    Compare(CompareArgs),
    /// Write ground truth and measurements for one run as text.
    Simulate(SimulateArgs),
    /// Filter and fuse a measurement file, writing extracted estimates.
    Track(TrackArgs),
    /// Print the reference configuration as TOML.
    Config,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; the reference preset when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Bandwidth B (distinct components per transmission).
    #[arg(long, short = 'b')]
    bandwidth: Option<usize>,
    /// Number of Monte Carlo runs.
    #[arg(long, short = 'n')]
    runs: Option<usize>,
    /// Master seed.
    #[arg(long, short)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, short)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::reference(),
        };
        if let Some(b) = self.bandwidth {
            cfg.bandwidth = b;
        }
        if let Some(n) = self.runs {
            cfg.mc_runs = n;
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_path = d.clone();
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Algorithm override.
    #[arg(long, short)]
    algorithm: Option<String>,
    /// Consensus rounds per timestep; a comma-separated list sweeps values.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Algorithms to compare.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "full,sample_replacement,partial_rank,no_consensus"
    )]
    algorithms: Vec<String>,
    /// Consensus rounds per timestep, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,6")]
    alpha: Vec<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Monte Carlo run index whose streams are written.
    #[arg(long, default_value_t = 0)]
    run: usize,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    common: Common,
    /// Measurement file (`timestep sensor z1 z2` lines).
    #[arg(long, short)]
    measurements: PathBuf,
    /// Optional truth file for OSPA scoring.
    #[arg(long, short)]
    truth: Option<PathBuf>,
    #[arg(long, short)]
    algorithm: Option<String>,
    #[arg(long)]
    alpha: Option<usize>,
    /// Run index for the fusion random streams.
    #[arg(long, default_value_t = 0)]
    run: usize,
}

fn algorithm(name: &str) -> Result<Algorithm> {
    Ok(name.parse::<Algorithm>()?)
}

fn run(args: RunArgs) -> Result<()> {
    let mut base = args.common.load()?;
    if let Some(a) = &args.algorithm {
        base.algorithm = algorithm(a)?;
    }
    let alphas = if args.alpha.is_empty() { vec![base.alpha] } else { args.alpha };
    let mut results = Vec::new();
    for a in alphas {
        let cfg = ExperimentConfig { alpha: a, ..base.clone() };
        let r = run_experiment(&cfg)?;
        let s = r.summary();
        println!(
            "{} alpha={} runs={} failed={} ospa={:.3} ± {:.3} m floats/run={:.0}",
            cfg.algorithm, a, s.runs, s.failed_runs, s.ospa_mean, s.ospa_se, s.tx_floats_mean
        );
        for f in &r.failures {
            eprintln!("run {} failed: {}", f.run, f.message);
        }
        results.push(r);
    }
    let files = write_outputs(&base.output_path, &results, None)?;
    println!("wrote {} files to {}", files.len(), base.output_path.display());
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let base = args.common.load()?;
    let algorithms = args.algorithms.iter().map(|a| algorithm(a)).collect::<Result<Vec<_>>>()?;
    let mut configs = Vec::new();
    for &alpha in &args.alpha {
        for &algorithm in &algorithms {
            configs.push(ExperimentConfig { algorithm, alpha, ..base.clone() });
        }
    }
    let cmp = compare_algorithms(&configs)?;
    println!("{:<22} {:>5} {:>10} {:>8} {:>12}", "algorithm", "alpha", "ospa_m", "se", "floats/run");
    for v in &cmp.variants {
        println!(
            "{:<22} {:>5} {:>10.3} {:>8.3} {:>12.0}",
            v.algorithm.name(),
            v.alpha,
            v.summary.ospa_mean,
            v.summary.ospa_se,
            v.summary.tx_floats_mean
        );
    }
    for c in cmp.ordering_checks() {
        println!(
            "alpha={} {} <= {}: diff={:+.3} se={:.3} holds={} separated(2se)={}",
            c.alpha, c.better, c.worse, c.mean_difference, c.se, c.holds, c.separated_2se
        );
    }
    let files = write_outputs(&base.output_path, &cmp.results, Some(&cmp))?;
    println!("wrote {} files to {}", files.len(), base.output_path.display());
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let sc = cfg.scenario.resolve()?;
    let seeds = SeedTree::new(cfg.master_seed).at("run", args.run as u64);
    let truth = generate_ground_truth(&sc, &seeds);
    let meas = generate_measurement_stream(&truth, &sc, &seeds);
    fs::create_dir_all(&cfg.output_path)?;
    let mut t = BufWriter::new(File::create(cfg.output_path.join("truth.txt"))?);
    write_truth(&mut t, &truth)?;
    t.flush()?;
    let mut m = BufWriter::new(File::create(cfg.output_path.join("measurements.txt"))?);
    write_measurements(&mut m, &meas)?;
    m.flush()?;
    println!("wrote truth.txt and measurements.txt to {}", cfg.output_path.display());
    Ok(())
}

fn track_cmd(args: TrackArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(a) = &args.algorithm {
        cfg.algorithm = algorithm(a)?;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    let scenario = Scenario::with_config(cfg.scenario.resolve()?)?;
    let sc = &scenario.config;
    let file = File::open(&args.measurements).with_context(|| format!("opening {}", args.measurements.display()))?;
    let frames = read_measurements(BufReader::new(file), sc.horizon, sc.sensor_count)
        .with_context(|| format!("parsing {}", args.measurements.display()))?;
    let seeds = SeedTree::new(cfg.master_seed).at("run", args.run as u64);
    let steps = track(&cfg, &scenario, &frames, &seeds)?;

    fs::create_dir_all(&cfg.output_path)?;
    let path = cfg.output_path.join("estimates.txt");
    let mut out = BufWriter::new(File::create(&path)?);
    writeln!(out, "# timestep sensor x y vx vy")?;
    for s in &steps {
        write_estimates(&mut out, s.timestep, &s.estimates)?;
    }
    out.flush()?;
    println!("wrote {}", path.display());

    if let Some(tp) = &args.truth {
        let file = File::open(tp).with_context(|| format!("opening {}", tp.display()))?;
        let truth = read_truth(BufReader::new(file), sc.horizon)?;
        let mut net = Vec::new();
        for (s, f) in steps.iter().zip(&truth.frames) {
            let pos = f.positions();
            let mut total = 0.0;
            for est in &s.estimates {
                total += ospa(est, &pos, &cfg.ospa)?.distance;
            }
            net.push(total / s.estimates.len() as f64);
        }
        println!("time-averaged network OSPA: {:.3} m", time_averaged(&net)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::Simulate(a) => simulate(a),
        Command::Track(a) => track_cmd(a),
        Command::Config => ExperimentConfig::reference()
            .to_toml()
            .map(|t| print!("{t}"))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
