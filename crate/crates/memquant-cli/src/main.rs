//! Command-line front end: dataset generation, the divide-and-conquer
//! and baseline fitters, the streaming replayer, the Monte-Carlo
//! experiment harness, and the sensor-network simulator.
//!
//! Every command is deterministic given its flags: all randomness sits
//! behind explicit seeds and reports are written by a single writer in
//! a fixed order. `MEMQUANT_THREADS` caps worker threads (0 or unset
//! means automatic).

mod csvio;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memquant::baselines::{naive_dc, qr_all};
use memquant::inference::{
    build_variance_estimate, confidence_interval, covariate_second_moment, VarianceEstimate,
};
use memquant::leqr::{dc_leqr, required_rounds, DcConfig, FitDiagnostics};
use memquant::nettree::{simulate_dc_leqr, TopologyKind, TreeTopology};
use memquant::online::OnlineState;
use memquant::rng::Rng;
use memquant::simgen::{
    gen_observations, run_coverage_experiment, true_beta_tau, ExperimentSpec, Method, NoiseModel,
};
use memquant::types::{dot, unit_direction};
use memquant::{Coefficients, Error, Observation, QuantileLevel, Result};

use csvio::{load_topology, write_dataset, write_rows, Dataset};

#[derive(Parser)]
#[command(
    name = "memquant",
    version,
    about = "Quantile regression estimators for data that does not fit in memory"
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus a sidecar of true coefficients.
    Gen(GenArgs),
    /// Multi-round divide-and-conquer fit.
    FitDc(FitDcArgs),
    /// Naive divide-and-conquer averaging baseline.
    FitNaive(FitNaiveArgs),
    /// Pooled fit on all rows (ignores the memory budget).
    FitAll(FitAllArgs),
    /// Replay a dataset through the one-pass streaming estimator.
    FitOnline(FitOnlineArgs),
    /// Run a Monte-Carlo coverage experiment from a config file.
    Experiment(ExperimentArgs),
    /// Execute the divide-and-conquer fit over a simulated sensor tree.
    Simnet(SimnetArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Noise model: homoscedastic | heteroscedastic | exponential.
    #[arg(long)]
    model: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Quantile levels recorded in the truth sidecar (repeatable).
    #[arg(long = "tau")]
    taus: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitDcArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tau: f64,
    /// Batch size; partitions are sequential blocks of this many rows.
    #[arg(long)]
    m: usize,
    /// Aggregation rounds; defaults to the schedule-derived count.
    #[arg(long)]
    q: Option<u32>,
    /// Bandwidth scaling constant.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// CSV file of candidate scaling constants for per-round adaptive
    /// selection (one value per line or comma-separated).
    #[arg(long)]
    adaptive: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Shuffle rows with this seed before partitioning.
    #[arg(long)]
    shuffle: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitNaiveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    m: usize,
    /// Rounds of the companion fit whose curvature feeds the intervals.
    #[arg(long)]
    q: Option<u32>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    shuffle: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitAllArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitOnlineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tau: f64,
    /// Initialization size: the first m rows seed the estimator, the
    /// rest stream through it.
    #[arg(long)]
    m: usize,
    /// Solve cadence (1 = every sample); interval boundaries always solve.
    #[arg(long, default_value_t = 1)]
    stride: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one row per replication to this file.
    #[arg(long)]
    per_rep: Option<PathBuf>,
    /// Print the planned replication count and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SimnetArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tau: f64,
    /// Topology family: star | chain | kary.
    #[arg(long, default_value = "star")]
    topology: String,
    /// Arity for kary topologies.
    #[arg(long, default_value_t = 2)]
    arity: usize,
    /// Node count; the dataset splits into this many sequential blocks.
    #[arg(long)]
    nodes: Option<usize>,
    /// Explicit topology file (node_id,parent_id; empty parent = root).
    #[arg(long)]
    topology_file: Option<PathBuf>,
    #[arg(long)]
    q: Option<u32>,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = CliArgs::parse();
    configure_threads();
    let result = match cli.command {
        Command::Gen(args) => run_gen(&args),
        Command::FitDc(args) => run_fit_dc(&args),
        Command::FitNaive(args) => run_fit_naive(&args),
        Command::FitAll(args) => run_fit_all(&args),
        Command::FitOnline(args) => run_fit_online(&args),
        Command::Experiment(args) => run_experiment(&args),
        Command::Simnet(args) => run_simnet(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("MEMQUANT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Distinct exit code per error class so scripts can branch on failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::AtRound { source, .. } | Error::AtBatch { source, .. } | Error::AtNode { source, .. } => {
            exit_code(source)
        }
        Error::RankDeficient | Error::NoConvergence { .. } | Error::BatchTooSmall { .. } => 4,
        Error::SingularSystem | Error::NotSymmetric => 5,
        Error::QuantileOutOfRange { .. } | Error::InvalidQuantileLevel(_) => 6,
        Error::DimensionMismatch { .. }
        | Error::InvalidDimensions(_)
        | Error::InvalidArity(_)
        | Error::InvalidTopology(_)
        | Error::CountMismatch { .. } => 7,
        Error::Overflow | Error::TooLarge { .. } => 8,
        Error::InvalidConfig(_) | Error::InvalidBandwidth(_) | Error::NonFiniteObservation => 3,
    }
}

fn quantile(tau: f64) -> Result<QuantileLevel> {
    QuantileLevel::new(tau)
}

fn run_gen(args: &GenArgs) -> Result<()> {
    let model: NoiseModel = args.model.parse()?;
    let mut rng = Rng::new(args.seed);
    let rows = gen_observations(args.n, args.p, model, &mut rng);
    write_dataset(&args.out, &rows, args.p)?;

    let taus = if args.taus.is_empty() {
        vec![0.1, 0.5, 0.9]
    } else {
        args.taus.clone()
    };
    let mut truth_rows = Vec::new();
    for &t in &taus {
        let tau = quantile(t)?;
        let beta = true_beta_tau(model, tau, args.p);
        let mut row = vec![t.to_string()];
        row.extend(beta.as_slice().iter().map(ToString::to_string));
        truth_rows.push(row);
    }
    let mut header = String::from("tau");
    for j in 0..=args.p {
        header.push_str(&format!(",b{j}"));
    }
    let truth_path = sidecar_path(&args.out);
    write_rows(&truth_path, &header, &truth_rows)?;
    println!(
        "wrote {} ({} rows) and {}",
        args.out.display(),
        args.n,
        truth_path.display()
    );
    Ok(())
}

fn sidecar_path(data: &Path) -> PathBuf {
    match data.extension() {
        Some(ext) if ext == "csv" => data.with_extension("truth.csv"),
        _ => {
            let mut p = data.as_os_str().to_owned();
            p.push(".truth.csv");
            PathBuf::from(p)
        }
    }
}

/// Report rows shared by the batch fitters: per-coordinate intervals,
/// the equal-weight direction, and meta/diagnostic lines.
fn fit_report_rows(
    beta: &Coefficients,
    ve: &VarianceEstimate,
    tau: QuantileLevel,
    alpha: f64,
    meta: &[(String, String)],
) -> Result<Vec<Vec<String>>> {
    let p_prime = beta.dim();
    let mut rows = Vec::new();
    for i in 0..p_prime {
        let mut direction = vec![0.0; p_prime];
        direction[i] = 1.0;
        let (lo, hi) = confidence_interval(beta, &direction, ve, tau, alpha)?;
        rows.push(vec![
            format!("b{i}"),
            beta[i].to_string(),
            lo.to_string(),
            hi.to_string(),
        ]);
    }
    let v0 = unit_direction(p_prime);
    let (lo, hi) = confidence_interval(beta, &v0, ve, tau, alpha)?;
    rows.push(vec![
        "v0".into(),
        dot(&v0, beta).to_string(),
        lo.to_string(),
        hi.to_string(),
    ]);
    for (name, value) in meta {
        rows.push(vec![name.clone(), value.clone(), String::new(), String::new()]);
    }
    Ok(rows)
}

fn diagnostics_meta(diag: &FitDiagnostics) -> Vec<(String, String)> {
    let mut meta = vec![
        ("n".into(), diag.n.to_string()),
        ("p".into(), (diag.p_prime - 1).to_string()),
        ("partitions".into(), diag.partitions.to_string()),
        ("uplink_scalars".into(), diag.uplink_scalars.to_string()),
    ];
    for r in &diag.rounds {
        let g = r.round;
        meta.push((format!("round{g}_bandwidth"), r.bandwidth.to_string()));
        meta.push((format!("round{g}_scale"), r.scale.to_string()));
        meta.push((format!("round{g}_score_norm"), r.score_norm.to_string()));
        meta.push((format!("round{g}_cg_iterations"), r.cg_iterations.to_string()));
        if r.skipped_candidates > 0 {
            meta.push((
                format!("round{g}_skipped_candidates"),
                r.skipped_candidates.to_string(),
            ));
        }
        if r.bandwidth_retries > 0 {
            meta.push((
                format!("round{g}_bandwidth_retries"),
                r.bandwidth_retries.to_string(),
            ));
        }
    }
    meta
}

const REPORT_HEADER: &str = "name,value,ci_lo,ci_hi";

fn load_grid(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut grid = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        for field in line.split(',') {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            grid.push(field.parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!(
                    "{}:{}: bad number {field:?}",
                    path.display(),
                    lineno + 1
                ))
            })?);
        }
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{}: empty candidate grid",
            path.display()
        )));
    }
    Ok(grid)
}

fn run_fit_dc(args: &FitDcArgs) -> Result<()> {
    let tau = quantile(args.tau)?;
    let mut data = Dataset::load(&args.data)?;
    if let Some(seed) = args.shuffle {
        data.shuffle(seed);
    }
    let partitions = data.partitions(args.m);
    let q = match args.q {
        Some(q) => q,
        None => required_rounds(data.p, args.m, data.rows.len())?,
    };
    let mut cfg = DcConfig::new(tau, args.m, q);
    cfg.scale_c = args.c;
    if let Some(grid) = &args.adaptive {
        cfg.adaptive_grid = Some(load_grid(grid)?);
    }
    let (beta, diag) = dc_leqr(&partitions, &cfg)?;
    let xx = covariate_second_moment(&partitions);
    let ve = build_variance_estimate(&diag.final_stats, &xx, diag.n)?;

    let mut meta = vec![
        ("method".into(), "dc_leqr".into()),
        ("tau".into(), args.tau.to_string()),
        ("m".into(), args.m.to_string()),
        ("q".into(), q.to_string()),
        ("alpha".into(), args.alpha.to_string()),
    ];
    meta.extend(diagnostics_meta(&diag));
    let rows = fit_report_rows(&beta, &ve, tau, args.alpha, &meta)?;
    write_rows(&args.out, REPORT_HEADER, &rows)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_fit_naive(args: &FitNaiveArgs) -> Result<()> {
    let tau = quantile(args.tau)?;
    let mut data = Dataset::load(&args.data)?;
    if let Some(seed) = args.shuffle {
        data.shuffle(seed);
    }
    let partitions = data.partitions(args.m);
    let beta = naive_dc(&partitions, tau)?;

    // Interval curvature comes from a companion multi-round fit, as in
    // the table protocols.
    let q = match args.q {
        Some(q) => q,
        None => required_rounds(data.p, args.m, data.rows.len())?,
    };
    let cfg = DcConfig::new(tau, args.m, q);
    let (_, diag) = dc_leqr(&partitions, &cfg)?;
    let xx = covariate_second_moment(&partitions);
    let ve = build_variance_estimate(&diag.final_stats, &xx, diag.n)?;

    let mut meta = vec![
        ("method".into(), "naive_dc".into()),
        ("tau".into(), args.tau.to_string()),
        ("m".into(), args.m.to_string()),
        ("companion_q".into(), q.to_string()),
        ("alpha".into(), args.alpha.to_string()),
    ];
    meta.extend(diagnostics_meta(&diag));
    let rows = fit_report_rows(&beta, &ve, tau, args.alpha, &meta)?;
    write_rows(&args.out, REPORT_HEADER, &rows)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// The pooled fit is a desk-scale baseline; past this row count the
/// point of the library is to not do this.
const QR_ALL_MAX_ROWS: usize = 1_000_000;

fn run_fit_all(args: &FitAllArgs) -> Result<()> {
    let tau = quantile(args.tau)?;
    let data = Dataset::load(&args.data)?;
    let n = data.rows.len();
    if n > QR_ALL_MAX_ROWS {
        return Err(Error::TooLarge {
            max_n: QR_ALL_MAX_ROWS,
            max_p: usize::MAX,
        });
    }
    let beta = qr_all(&data.rows, tau)?;

    // Curvature at the fit itself, using the aggregate-floor bandwidth.
    let h = memquant::Bandwidth::new((data.p.max(1) as f64 / n as f64).sqrt())?;
    let stats = memquant::leqr::compute_local_stats(&data.rows, &beta, h, tau);
    let partitions = data.partitions(n);
    let xx = covariate_second_moment(&partitions);
    let ve = build_variance_estimate(&stats, &xx, n as u64)?;

    let meta = vec![
        ("method".into(), "qr_all".into()),
        ("tau".into(), args.tau.to_string()),
        ("n".into(), n.to_string()),
        ("p".into(), data.p.to_string()),
        ("alpha".into(), args.alpha.to_string()),
        ("curvature_bandwidth".into(), h.value().to_string()),
    ];
    let rows = fit_report_rows(&beta, &ve, tau, args.alpha, &meta)?;
    write_rows(&args.out, REPORT_HEADER, &rows)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_fit_online(args: &FitOnlineArgs) -> Result<()> {
    let tau = quantile(args.tau)?;
    let data = Dataset::load(&args.data)?;
    if data.rows.len() <= args.m {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} rows; need more than m = {} to stream",
            data.rows.len(),
            args.m
        )));
    }
    let v0 = unit_direction(data.p + 1);
    let mut state = OnlineState::init(&data.rows[..args.m], tau)?;
    state.set_solve_stride(args.stride);

    let mut header = String::from("j");
    for i in 0..=data.p {
        header.push_str(&format!(",b{i}"));
    }
    header.push_str(",v0_ci_half");
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut record = |state: &OnlineState, beta: &Coefficients| -> Result<()> {
        let (lo, hi) = state.confidence_interval(&v0, args.alpha)?;
        let mut row = vec![state.samples_seen().to_string()];
        row.extend(beta.as_slice().iter().map(ToString::to_string));
        row.push(((hi - lo) / 2.0).to_string());
        rows.push(row);
        Ok(())
    };

    for obs in data.rows[args.m..].iter().cloned() {
        let beta = state.ingest(obs)?;
        if state.samples_seen() == state.interval_end() {
            record(&state, &beta)?;
        }
    }
    if state.samples_seen() != state.interval_end() {
        let beta = state.solve_now()?;
        record(&state, &beta)?;
    }
    write_rows(&args.out, &header, &rows)?;
    println!(
        "wrote {} ({} checkpoints, {} solve failures)",
        args.out.display(),
        rows.len(),
        state.solve_failures()
    );
    Ok(())
}

/// Parsed experiment configuration: one spec per (method, q) pair.
struct ExperimentPlan {
    specs: Vec<ExperimentSpec>,
}

fn parse_experiment_config(path: &Path) -> Result<ExperimentPlan> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut p = None;
    let mut m = None;
    let mut n = None;
    let mut tau = None;
    let mut model = None;
    let mut methods: Vec<Method> = Vec::new();
    let mut qs: Vec<Option<u32>> = Vec::new();
    let mut reps = 500u64;
    let mut seed = 0u64;
    let mut alpha = 0.05f64;
    let mut c = 1.0f64;
    let mut adaptive_grid: Option<Vec<f64>> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| {
            Error::InvalidConfig(format!("{}:{}: {what}", path.display(), lineno + 1))
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad("expected key = value"))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "p" => p = Some(value.parse().map_err(|_| bad("bad p"))?),
            "m" => m = Some(value.parse().map_err(|_| bad("bad m"))?),
            "n" => n = Some(value.parse().map_err(|_| bad("bad n"))?),
            "tau" => tau = Some(value.parse::<f64>().map_err(|_| bad("bad tau"))?),
            "model" => model = Some(value.parse::<NoiseModel>().map_err(|_| bad("bad model"))?),
            "method" => {
                for part in value.split(',') {
                    methods.push(part.trim().parse().map_err(|_| bad("bad method"))?);
                }
            }
            "q" => {
                for part in value.split(',') {
                    let part = part.trim();
                    if part == "auto" {
                        qs.push(None);
                    } else {
                        qs.push(Some(part.parse().map_err(|_| bad("bad q"))?));
                    }
                }
            }
            "reps" => reps = value.parse().map_err(|_| bad("bad reps"))?,
            "seed" => seed = value.parse().map_err(|_| bad("bad seed"))?,
            "alpha" => alpha = value.parse().map_err(|_| bad("bad alpha"))?,
            "c" => c = value.parse().map_err(|_| bad("bad c"))?,
            "adaptive_grid" => {
                // Either lo:hi:count or an explicit comma list.
                if let Some((lo, rest)) = value.split_once(':') {
                    let (hi, count) = rest.split_once(':').ok_or_else(|| {
                        bad("adaptive_grid wants lo:hi:count or a comma list")
                    })?;
                    let lo: f64 = lo.trim().parse().map_err(|_| bad("bad grid lo"))?;
                    let hi: f64 = hi.trim().parse().map_err(|_| bad("bad grid hi"))?;
                    let count: usize = count.trim().parse().map_err(|_| bad("bad grid count"))?;
                    if count < 2 || hi <= lo {
                        return Err(bad("grid needs hi > lo and count >= 2"));
                    }
                    adaptive_grid = Some(
                        (0..count)
                            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                            .collect(),
                    );
                } else {
                    let mut grid = Vec::new();
                    for part in value.split(',') {
                        grid.push(part.trim().parse().map_err(|_| bad("bad grid value"))?);
                    }
                    adaptive_grid = Some(grid);
                }
            }
            other => return Err(bad(&format!("unknown key {other:?}"))),
        }
    }

    let missing = |what: &str| Error::InvalidConfig(format!("{}: missing {what}", path.display()));
    let p = p.ok_or_else(|| missing("p"))?;
    let m = m.ok_or_else(|| missing("m"))?;
    let n = n.ok_or_else(|| missing("n"))?;
    let tau = QuantileLevel::new(tau.ok_or_else(|| missing("tau"))?)?;
    let model = model.ok_or_else(|| missing("model"))?;
    if methods.is_empty() {
        return Err(missing("method"));
    }
    if qs.is_empty() {
        qs.push(None);
    }

    let mut specs = Vec::new();
    for &method in &methods {
        for &q in &qs {
            let mut spec = ExperimentSpec::new(p, m, n, tau, model, method);
            spec.q = q;
            spec.reps = reps;
            spec.base_seed = seed;
            spec.alpha = alpha;
            spec.scale_c = c;
            spec.adaptive_grid = adaptive_grid.clone();
            specs.push(spec);
        }
    }
    Ok(ExperimentPlan { specs })
}

fn run_experiment(args: &ExperimentArgs) -> Result<()> {
    let plan = parse_experiment_config(&args.config)?;
    if args.dry_run {
        let total: u64 = plan.specs.iter().map(|s| s.reps).sum();
        println!(
            "planned: {} summary rows, {} replications total",
            plan.specs.len(),
            total
        );
        return Ok(());
    }
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--out is required unless --dry-run".into()))?;

    let mut summary_rows = Vec::new();
    let mut per_rep_rows = Vec::new();
    for spec in &plan.specs {
        let mut spec = spec.clone();
        spec.keep_trials = args.per_rep.is_some();
        let summary = run_coverage_experiment(&spec)?;
        summary_rows.push(vec![
            summary.method.to_string(),
            summary.q.to_string(),
            summary.tau.to_string(),
            summary.log_m_n.to_string(),
            summary.coverage.to_string(),
            summary.mean_bias.to_string(),
            summary
                .variance
                .map(|v| v.to_string())
                .unwrap_or_default(),
            summary.seconds.to_string(),
            summary.failures.to_string(),
        ]);
        println!(
            "{} q={}: coverage {:.3}, bias {:+.4}, variance {}, {:.1}s",
            summary.method,
            summary.q,
            summary.coverage,
            summary.mean_bias,
            summary
                .variance
                .map(|v| format!("{v:.3e}"))
                .unwrap_or_else(|| "n/a".into()),
            summary.seconds
        );
        if args.per_rep.is_some() {
            let v0 = unit_direction(spec.p + 1);
            for trial in &summary.trials {
                per_rep_rows.push(vec![
                    summary.method.to_string(),
                    summary.q.to_string(),
                    trial.seed.to_string(),
                    dot(&v0, &trial.estimate).to_string(),
                    trial.truth.to_string(),
                    trial.ci.0.to_string(),
                    trial.ci.1.to_string(),
                    (trial.covered as u8).to_string(),
                    trial
                        .companion_v0
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                ]);
            }
        }
    }
    write_rows(
        out,
        "method,q,tau,log_m_n,coverage,bias,variance,seconds,failures",
        &summary_rows,
    )?;
    println!("wrote {}", out.display());
    if let Some(path) = &args.per_rep {
        write_rows(
            path,
            "method,q,seed,estimate_v0,truth,ci_lo,ci_hi,covered,companion_v0",
            &per_rep_rows,
        )?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_simnet(args: &SimnetArgs) -> Result<()> {
    let tau = quantile(args.tau)?;
    let data = Dataset::load(&args.data)?;

    let topology = match &args.topology_file {
        Some(path) => load_topology(path)?,
        None => {
            let nodes = args.nodes.ok_or_else(|| {
                Error::InvalidConfig("--nodes is required without --topology-file".into())
            })?;
            let kind = match args.topology.as_str() {
                "star" => TopologyKind::Star,
                "chain" => TopologyKind::Chain,
                "kary" => TopologyKind::BalancedKAry(args.arity),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown topology {other:?} (star | chain | kary)"
                    )))
                }
            };
            TreeTopology::build(kind, nodes)?
        }
    };
    let n_nodes = topology.node_count();
    let block = data.rows.len().div_ceil(n_nodes);
    let batches: Vec<&[Observation]> = data.partitions(block);
    if batches.len() != n_nodes {
        return Err(Error::InvalidConfig(format!(
            "{} rows split into blocks of {block} gives {} batches for {n_nodes} nodes",
            data.rows.len(),
            batches.len()
        )));
    }
    let q = match args.q {
        Some(q) => q,
        None => required_rounds(data.p, block, data.rows.len())?,
    };
    let mut cfg = DcConfig::new(tau, block, q);
    cfg.scale_c = args.c;
    let (beta, comm) = simulate_dc_leqr(&topology, &batches, &cfg)?;

    let mut rows: Vec<Vec<String>> = beta
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, v)| vec![format!("b{i}"), v.to_string()])
        .collect();
    let scalar_bytes = 8u64;
    for (name, value) in [
        ("nodes".to_string(), n_nodes.to_string()),
        ("batch_rows".to_string(), block.to_string()),
        ("q".to_string(), q.to_string()),
        ("tau".to_string(), args.tau.to_string()),
        ("depth".to_string(), comm.depth.to_string()),
        ("rounds".to_string(), comm.rounds.to_string()),
        ("messages".to_string(), comm.messages.to_string()),
        ("uplink_scalars".to_string(), comm.uplink_scalars.to_string()),
        ("downlink_scalars".to_string(), comm.downlink_scalars.to_string()),
        (
            "uplink_bytes".to_string(),
            (comm.uplink_scalars * scalar_bytes).to_string(),
        ),
        (
            "downlink_bytes".to_string(),
            (comm.downlink_scalars * scalar_bytes).to_string(),
        ),
    ] {
        rows.push(vec![name, value]);
    }
    write_rows(&args.out, "name,value", &rows)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
