use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pnpnet::config::RunConfig;
use pnpnet::evalbench::{
    bench_ops, evaluate, evaluate_instances, parse_angle, parse_methods, sweep_outliers, EvalReport, Method, Solvers,
    SuccessCriteria,
};
use pnpnet::io::{
    load_dataset, read_import_table, sample_imported, save_dataset, summary_rows, write_csv, write_jsonl, ImportConfig,
    OpsCsvRow, PoseRow, WeightFile,
};
use pnpnet::lm::LMConfig;
use pnpnet::synthgen::{OutlierPolicy, PosePrior, SyntheticStream};
use pnpnet::trainer::{TrainRecord, Trainer};
use pnpnet::{Error, Result};

#[derive(Parser)]
#[command(name = "pnpnet", version, about = "Robust Perspective-n-Point toolkit")]
struct Cli {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic instances to a dataset file.
    Generate(GenerateArgs),
    /// Train a model on the synthetic scenario.
    Train(TrainArgs),
    /// Solve every record of a dataset file.
    Solve(SolveArgs),
    /// Success rates on a scenario or dataset.
    Eval(EvalArgs),
    /// Operation counts as a function of the number of correspondences.
    BenchOps(BenchOpsArgs),
    /// Sample instances from an exported correspondence table.
    Import(ImportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Uniform,
    Gaussian,
}

#[derive(Args, Default)]
struct ScenarioArgs {
    #[arg(long)]
    n: Option<usize>,
    /// `off`, `on` (uniform count) or a fixed count.
    #[arg(long, value_parser = parse_outliers)]
    outliers: Option<OutlierPolicy>,
    /// Largest count under `--outliers on`.
    #[arg(long)]
    outlier_max: Option<usize>,
    #[arg(long)]
    sigma2d: Option<f64>,
    #[arg(long)]
    sigma3d: Option<f64>,
    #[arg(long, value_enum)]
    pose_prior: Option<PriorArg>,
    #[arg(long)]
    gaussian_sigma: Option<f64>,
}

fn parse_outliers(s: &str) -> std::result::Result<OutlierPolicy, String> {
    match s {
        "off" => Ok(OutlierPolicy::Off),
        "on" | "uniform" => Ok(OutlierPolicy::Uniform),
        k => k
            .parse()
            .map(OutlierPolicy::Fixed)
            .map_err(|_| format!("expected off, on or a count, got {k:?}")),
    }
}

impl ScenarioArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let sc = &mut cfg.scenario;
        if let Some(n) = self.n {
            sc.n = n;
        }
        if let Some(o) = self.outliers {
            sc.outliers = o;
        }
        if self.outlier_max.is_some() {
            sc.outlier_count_max = self.outlier_max;
        }
        if let Some(s) = self.sigma2d {
            sc.sigma2d = s;
        }
        if let Some(s) = self.sigma3d {
            sc.sigma3d = s;
        }
        if let Some(p) = self.pose_prior {
            sc.pose_prior = match p {
                PriorArg::Uniform => PosePrior::UniformBox,
                PriorArg::Gaussian => PosePrior::Gaussian,
            };
        }
        if let Some(s) = self.gaussian_sigma {
            sc.gaussian_sigma = s;
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Weight container, rewritten at every checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Line-delimited JSON training log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    updates: Option<u64>,
    /// Stop after this many updates; resume later with `--resume`.
    #[arg(long)]
    stop_at: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    method: String,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated list of net, pnp-net, epnp, epnp-lm, ransac, oracle.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Rotation threshold, e.g. `1deg` or `0.02rad`.
    #[arg(long)]
    tr: Option<String>,
    #[arg(long)]
    tt: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed outlier counts, e.g. `0,1,2,3,4`.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    /// Evaluate a dataset file instead of the synthetic scenario.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Summary CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial records as line-delimited JSON.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct BenchOpsArgs {
    /// Inclusive range `lo..hi`.
    #[arg(long, default_value = "6..20", value_parser = parse_range)]
    n_range: (usize, usize),
    #[arg(long, default_value = "net,pnp-net,epnp,epnp-lm,ransac")]
    methods: String,
    /// Refiner depth; taken from the weights when given.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    transcendental_cost: Option<u64>,
    #[arg(long)]
    inlier_ratio: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("expected lo..hi, got {s:?}"))?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad lower bound in {s:?}"))?;
    let hi: usize = hi.trim_start_matches('=').trim().parse().map_err(|_| format!("bad upper bound in {s:?}"))?;
    if lo > hi {
        return Err(format!("empty range {s:?}"));
    }
    Ok((lo, hi))
}

#[derive(Args)]
struct ImportArgs {
    /// CSV with columns image_id, point_id, x, y, z, u, v, f, tx, ty, tz, wx, wy, wz.
    #[arg(long)]
    table: PathBuf,
    #[arg(long, default_value_t = 9)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Corrupt two of the first `n` points of every record.
    #[arg(long)]
    outliers: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_model(path: Option<&Path>) -> Result<Option<pnpnet::pipeline::PnpNet>> {
    path.map(|p| WeightFile::load(p).map(|w| w.model)).transpose()
}

fn solvers<'a>(cfg: &RunConfig, model: Option<&'a pnpnet::pipeline::PnpNet>) -> Solvers<'a> {
    let mut s = Solvers::new(model, cfg.ransac.clone());
    if model.is_none() {
        if let Some(lm) = &cfg.lm {
            s.lm = lm.clone();
        }
    }
    s
}

fn generate(cfg: RunConfig, args: GenerateArgs) -> Result<()> {
    let mut cfg = cfg;
    args.scenario.apply(&mut cfg);
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    cfg.validate()?;
    let instances = SyntheticStream::new(cfg.scenario.clone())?.take_instances(args.trials)?;
    save_dataset(&args.out, &instances)?;
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for inst in &instances {
        *hist.entry(inst.outlier_count()).or_default() += 1;
    }
    let hist: Vec<String> = hist.iter().map(|(k, v)| format!("{k}:{v}")).collect();
    println!("wrote {} instances to {}", instances.len(), args.out.display());
    println!("outlier histogram {}", hist.join(" "));
    Ok(())
}

/// Writes to a sibling file first so an interrupted write never clobbers
/// the previous checkpoint.
fn save_atomically(file: &WeightFile, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    file.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn train(cfg: RunConfig, args: TrainArgs) -> Result<()> {
    let mut cfg = cfg;
    args.scenario.apply(&mut cfg);
    let tc = &mut cfg.train;
    if let Some(u) = args.updates {
        tc.total_updates = u;
    }
    if let Some(lr) = args.learning_rate {
        tc.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        tc.batch_size = b;
    }
    if let Some(c) = args.checkpoint_every {
        tc.checkpoint_every = c;
    }
    if let Some(seed) = args.seed {
        tc.seed = seed;
        cfg.scenario.seed = seed;
    }
    cfg.validate()?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let file = WeightFile::load(path)?;
            let state = file
                .state
                .ok_or_else(|| Error::Format(format!("{} holds no trainer state", path.display())))?;
            Trainer::resume(cfg.train.clone(), cfg.scenario.clone(), file.model.params, state)?
        }
        None => Trainer::new(cfg.train.clone(), cfg.scenario.clone())?,
    };
    let mut log: Option<Box<dyn Write>> = match &args.log {
        Some(p) => {
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(args.resume.is_some())
                .truncate(args.resume.is_none())
                .open(p)?;
            Some(Box::new(BufWriter::new(f)))
        }
        None => None,
    };
    let out = args.out.clone();
    let stop = args.stop_at.unwrap_or(cfg.train.total_updates);
    let report = trainer.run_until(stop, |t, r: &TrainRecord| {
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?)?;
            w.flush()?;
        }
        eprintln!(
            "update {:>6}  curriculum {:.2}  held-out intermediate {:.4}  final {:.4}  success net {:.3} pnp-net {:.3}",
            r.update, r.curriculum, r.heldout_intermediate, r.heldout_final, r.val_success_net, r.val_success_pnpnet
        );
        save_atomically(
            &WeightFile {
                model: t.model(),
                state: Some(t.state.clone()),
            },
            &out,
        )
    });
    match report {
        Ok(report) => {
            eprintln!("trained {} updates in {:.1}s", report.updates, report.wall_clock_secs);
            println!("wrote {}", out.display());
            Ok(())
        }
        Err(e) => {
            if out.exists() {
                eprintln!("last checkpoint kept at {}", out.display());
            }
            Err(e)
        }
    }
}

fn solve(cfg: RunConfig, args: SolveArgs) -> Result<()> {
    cfg.validate()?;
    let method: Method = args.method.parse()?;
    if !matches!(
        method,
        Method::Net | Method::PnpNet | Method::Epnp | Method::EpnpLm | Method::Ransac
    ) {
        return Err(Error::InvalidConfig(format!("solve does not support {method}")));
    }
    let model = load_model(args.weights.as_deref())?;
    let solvers = solvers(&cfg, model.as_ref());
    solvers.check(&[method])?;
    let instances = load_dataset(&args.input)?;
    let rows: Vec<PoseRow> = instances
        .iter()
        .enumerate()
        .map(|(k, inst)| PoseRow::new(k, method, inst, &solvers.solve(method, inst, k as u64)))
        .collect();
    write_csv(output(args.out.as_deref())?, &rows)
}

fn eval(cfg: RunConfig, args: EvalArgs) -> Result<()> {
    let mut cfg = cfg;
    args.scenario.apply(&mut cfg);
    let ev = &mut cfg.eval;
    if let Some(m) = &args.methods {
        ev.methods = parse_methods(m)?;
    }
    if let Some(tr) = &args.tr {
        ev.t_r = tr.clone();
    }
    if let Some(tt) = args.tt {
        ev.t_t = tt;
    }
    if let Some(t) = args.trials {
        ev.trials = t;
    }
    if let Some(s) = args.seed {
        ev.seed = s;
    }
    if let Some(s) = &args.sweep {
        ev.sweep = s.clone();
    }
    cfg.validate()?;
    let criteria = SuccessCriteria::new(parse_angle(&cfg.eval.t_r)?, cfg.eval.t_t)?;
    let model = load_model(args.weights.as_deref())?;
    let solvers = solvers(&cfg, model.as_ref());
    let ev = &cfg.eval;

    let reports: Vec<(Option<usize>, EvalReport)> = if let Some(path) = &args.input {
        if !ev.sweep.is_empty() {
            return Err(Error::InvalidConfig("--sweep applies to synthetic scenarios only".into()));
        }
        let instances = load_dataset(path)?;
        vec![(None, evaluate_instances(&ev.methods, &instances, &criteria, &solvers)?)]
    } else if ev.sweep.is_empty() {
        vec![(None, evaluate(&ev.methods, &cfg.scenario, &criteria, ev.trials, ev.seed, &solvers)?)]
    } else {
        let reports = sweep_outliers(&ev.methods, &cfg.scenario, &criteria, &ev.sweep, ev.trials, ev.seed, &solvers)?;
        ev.sweep.iter().copied().map(Some).zip(reports).collect()
    };

    let rows: Vec<_> = reports.iter().flat_map(|(k, r)| summary_rows(r, *k)).collect();
    write_csv(output(args.out.as_deref())?, &rows)?;
    if let Some(p) = &args.records {
        let records: Vec<_> = reports.iter().flat_map(|(_, r)| r.records.iter().cloned()).collect();
        write_jsonl(BufWriter::new(File::create(p)?), &records)?;
    }
    Ok(())
}

fn bench(cfg: RunConfig, args: BenchOpsArgs) -> Result<()> {
    let mut cfg = cfg;
    if let Some(c) = args.transcendental_cost {
        cfg.eval.transcendental_cost = c;
    }
    if let Some(r) = args.inlier_ratio {
        cfg.eval.inlier_ratio = r;
    }
    cfg.validate()?;
    let methods = parse_methods(&args.methods)?;
    let model = load_model(args.weights.as_deref())?;
    let m = match (args.layers, &model, &cfg.lm) {
        (Some(m), _, _) => m,
        (None, Some(model), _) => model.lm.m(),
        (None, None, Some(lm)) => lm.m(),
        (None, None, None) => LMConfig::default().m(),
    };
    let ops = cfg.ops_config(m);
    let rows: Vec<OpsCsvRow> = bench_ops(&methods, args.n_range.0..=args.n_range.1, &ops)
        .iter()
        .map(OpsCsvRow::from)
        .collect();
    write_csv(output(args.out.as_deref())?, &rows)
}

fn import(args: ImportArgs) -> Result<()> {
    let rows = read_import_table(File::open(&args.table)?)?;
    let cfg = ImportConfig {
        trials: args.trials,
        n: args.n,
        outliers: args.outliers,
        seed: args.seed,
    };
    let instances = sample_imported(&rows, &cfg)?;
    save_dataset(&args.out, &instances)?;
    println!("wrote {} instances to {}", instances.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => generate(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Solve(a) => solve(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::BenchOps(a) => bench(cfg, a),
        Command::Import(a) => import(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
