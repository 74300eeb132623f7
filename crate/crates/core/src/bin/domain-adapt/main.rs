mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use domain_adapt::experiment::{
    ablation_preset, run_ablation, score_targets, AblationRow, ClusterScores,
};
use domain_adapt::io::{
    export_results, gen_1smt, load_csv, load_labels, save_csv, save_labels, ResultRecord,
    SyntheticSpec, TraceRow,
};
use domain_adapt::metrics::hungarian_accuracy;
use domain_adapt::solver::{adapt_observed, AdaptError};
use domain_adapt::source::{fit_source_with, kmeans, predict};
use domain_adapt::{Dataset64, Error, SolverConfig, SourceModel64};

use config::{parse_list, ConfigFile};

const EXIT_USAGE: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "domain-adapt",
    version,
    about = "Multi-target unsupervised domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the source projection and write it as a JSON artifact.
    FitSource(FitSourceArgs),
    /// Jointly cluster the target domains with source and cross-target transfer.
    Adapt(AdaptArgs),
    /// Compare the full model against runs with transfer channels switched off.
    Ablate(AblateArgs),
    /// Generate a synthetic one-source/multi-target problem as CSV files.
    Synth(SynthArgs),
}

#[derive(Args)]
struct FitSourceArgs {
    #[arg(long)]
    data: PathBuf,
    /// Last CSV column holds class labels.
    #[arg(long)]
    labeled: bool,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1e-3)]
    ridge: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shift features to zero mean before fitting.
    #[arg(long)]
    center: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TargetInputs {
    /// Source model JSON written by `fit-source`.
    #[arg(long)]
    source: PathBuf,
    /// Target CSV; repeat once per target domain.
    #[arg(long = "target", required = true)]
    targets: Vec<PathBuf>,
    /// Ground-truth label file per target (one label per line), for evaluation only.
    #[arg(long = "truth")]
    truths: Vec<PathBuf>,
    /// Last column of every target CSV holds ground-truth labels.
    #[arg(long)]
    labeled: bool,
    /// Shift every target to zero feature mean.
    #[arg(long)]
    center: bool,
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    lambda4: Option<f64>,
    /// Dictionary size.
    #[arg(long)]
    r: Option<usize>,
    /// Per-target cluster counts, comma separated.
    #[arg(long)]
    kt: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    irls_iters: Option<usize>,
    /// Relative objective decrease that stops the outer loop.
    #[arg(long)]
    tol: Option<f64>,
    /// Largest relative step of W_T or U that still counts as settled.
    #[arg(long)]
    tol_step: Option<f64>,
    #[arg(long)]
    tol_param: Option<f64>,
    #[arg(long)]
    eps_irls: Option<f64>,
    #[arg(long)]
    ridge_eps: Option<f64>,
    /// JSON object or key=value lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    inputs: TargetInputs,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    inputs: TargetInputs,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 3)]
    targets: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    class_std: f64,
    #[arg(long, default_value_t = 0.5)]
    angle: f64,
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0.9)]
    relatedness: f64,
    /// Keep the raw, uncentered coordinates.
    #[arg(long)]
    no_center: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric(_) => Failure::Numeric(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::FitSource(a) => cmd_fit_source(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}

fn cmd_fit_source(args: FitSourceArgs) -> CmdResult {
    let mut data = load_csv::<f64>(&args.data, args.labeled)?;
    if args.center {
        data = data.centered();
    }
    let cfg = SolverConfig {
        seed: args.seed,
        ..SolverConfig::default()
    };
    let mut clusters = None;
    let model = fit_source_with(&data, args.k, args.ridge, &cfg, |data, k, seed| {
        let assign = kmeans(data, k, seed, 300)?.assign;
        clusters = Some(assign.clone());
        Ok(assign)
    })?;
    model.save(&args.out)?;

    let reference = data
        .labels
        .clone()
        .or(clusters)
        .expect("labels or clusters");
    let pred = predict(&model, &data);
    let hits = pred.iter().zip(&reference).filter(|(p, t)| p == t).count();
    println!("d = {}", model.dim());
    println!("K = {}", model.k);
    println!(
        "source train accuracy = {:.4}{}",
        hits as f64 / pred.len() as f64,
        if data.labels.is_some() {
            ""
        } else {
            " (against K-means clusters)"
        }
    );
    Ok(0)
}

fn load_targets(inputs: &TargetInputs) -> Result<(SourceModel64, Vec<Dataset64>), Failure> {
    let source = SourceModel64::load(&inputs.source)?;
    if !inputs.truths.is_empty() && inputs.truths.len() != inputs.targets.len() {
        return Err(Failure::Usage(format!(
            "{} --truth files for {} --target files",
            inputs.truths.len(),
            inputs.targets.len()
        )));
    }
    let mut targets = Vec::with_capacity(inputs.targets.len());
    for (m, path) in inputs.targets.iter().enumerate() {
        let mut data = load_csv::<f64>(path, inputs.labeled)?;
        if let Some(truth) = inputs.truths.get(m) {
            let labels = load_labels(truth)?;
            data = Dataset64::new(data.features, Some(labels), data.domain_id)?;
        }
        if inputs.center {
            data = data.centered();
        }
        targets.push(data);
    }
    Ok((source, targets))
}

/// Merges flags over the config file over `base`. Without a base, the four
/// weights and the dictionary size must be given explicitly.
fn resolve_config(
    flags: &SolverFlags,
    base: Option<SolverConfig>,
) -> Result<SolverConfig, Failure> {
    let file = match &flags.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let explicit = base.is_none();
    let mut cfg = base.unwrap_or_default();

    macro_rules! pick {
        ($flag:expr, $key:literal) => {
            match $flag {
                Some(v) => Some(v),
                None => file.get($key)?,
            }
        };
    }
    let required = [
        ("lambda1", pick!(flags.lambda1, "lambda1"), &mut cfg.lambda1),
        ("lambda2", pick!(flags.lambda2, "lambda2"), &mut cfg.lambda2),
        ("lambda3", pick!(flags.lambda3, "lambda3"), &mut cfg.lambda3),
        ("lambda4", pick!(flags.lambda4, "lambda4"), &mut cfg.lambda4),
    ];
    for (name, value, slot) in required {
        match value {
            Some(v) => *slot = v,
            None if explicit => {
                return Err(Failure::Usage(format!(
                    "--{name} is required (flag or config entry)"
                )))
            }
            None => {}
        }
    }
    match pick!(flags.r, "r") {
        Some(r) => cfg.r = r,
        None if explicit => {
            return Err(Failure::Usage(
                "--r is required (flag or config entry)".into(),
            ))
        }
        None => {}
    }
    let kt = match &flags.kt {
        Some(raw) => Some(parse_list(raw)?),
        None => file.get_list("kt")?,
    };
    if kt.is_some() {
        cfg.target_classes = kt;
    }
    if let Some(v) = pick!(flags.seed, "seed") {
        cfg.seed = v;
    }
    if let Some(v) = pick!(flags.max_iters, "max_iters") {
        cfg.max_outer_iters = v;
    }
    if let Some(v) = pick!(flags.irls_iters, "irls_iters") {
        cfg.inner_irls_iters = v;
    }
    if let Some(v) = pick!(flags.tol, "tol") {
        cfg.tol_objective = v;
    }
    if let Some(v) = pick!(flags.tol_step, "tol_step") {
        cfg.tol_step = v;
    }
    if let Some(v) = pick!(flags.tol_param, "tol_param") {
        cfg.tol_param = v;
    }
    if let Some(v) = pick!(flags.eps_irls, "eps_irls") {
        cfg.epsilon_irls = v;
    }
    if let Some(v) = pick!(flags.ridge_eps, "ridge_eps") {
        cfg.ridge_eps = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {threads} threads: {e}")))
}

fn write_scores_csv(
    path: &Path,
    ids: &[String],
    scores: &[Option<ClusterScores>],
) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["target", "accuracy", "nmi", "ari"])
        .map_err(Error::from)?;
    for (id, s) in ids.iter().zip(scores) {
        if let Some(s) = s {
            w.write_record([
                id.clone(),
                s.accuracy.to_string(),
                s.nmi.to_string(),
                s.ari.to_string(),
            ])
            .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

fn cmd_adapt(args: AdaptArgs) -> CmdResult {
    let cfg = resolve_config(&args.solver, None)?;
    let (source, targets) = load_targets(&args.inputs)?;
    let truths: Vec<Option<Vec<usize>>> = targets.iter().map(|t| t.labels.clone()).collect();
    let ids: Vec<String> = targets.iter().map(|t| t.domain_id.clone()).collect();

    let mut trace = Vec::new();
    let mut trace_err = None;
    let pool = thread_pool(args.solver.threads)?;
    let outcome = pool.install(|| {
        adapt_observed(&source, &targets, &cfg, |cycle, _, states, objective| {
            let metrics = match score_targets(states, &truths) {
                Ok(s) => s.iter().flatten().map(|s| (s.accuracy, s.nmi)).collect(),
                Err(e) => {
                    trace_err.get_or_insert(e);
                    Vec::new()
                }
            };
            trace.push(TraceRow {
                cycle,
                objective,
                metrics,
            });
        })
    });
    if let Some(e) = trace_err {
        return Err(e.into());
    }
    let result = match outcome {
        Ok(r) => r,
        Err(AdaptError::Invalid(e)) => return Err(e.into()),
        Err(AdaptError::Numeric {
            iteration,
            error,
            last,
        }) => {
            let record = ResultRecord::new(&last, &ids, &cfg);
            export_results(&record, &trace, &args.out)?;
            return Err(Failure::Numeric(format!(
                "cycle {iteration}: {error}; state after cycle {} written to {}",
                last.iters,
                args.out.display()
            )));
        }
    };

    let record = ResultRecord::new(&result, &ids, &cfg);
    export_results(&record, &trace, &args.out)?;
    let final_obj = result.objective_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "cycles = {}  converged = {}  objective = {final_obj:.10e}",
        result.iters, result.converged
    );
    let scores = score_targets(&result.targets, &truths)?;
    if scores.iter().any(Option::is_some) {
        println!(
            "{:<16} {:>8} {:>8} {:>8}",
            "target", "accuracy", "nmi", "ari"
        );
        for (id, s) in ids.iter().zip(&scores) {
            if let Some(s) = s {
                println!("{id:<16} {:>8.4} {:>8.4} {:>8.4}", s.accuracy, s.nmi, s.ari);
            }
        }
        write_scores_csv(&args.out.join("metrics.csv"), &ids, &scores)?;
    }
    Ok(if result.converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn ablation_csv(rows: &[AblationRow], ids: &[String]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "variant",
        "lambda1",
        "lambda2",
        "lambda3",
        "lambda4",
        "objective",
        "iters",
        "converged",
        "mean_accuracy",
        "mean_nmi",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(ids.iter().map(|id| format!("accuracy_{id}")));
    w.write_record(&header).map_err(Error::from)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for row in rows {
        let c = &row.config;
        let mut rec = vec![
            row.variant.name().to_owned(),
            c.lambda1.to_string(),
            c.lambda2.to_string(),
            c.lambda3.to_string(),
            c.lambda4.to_string(),
            row.objective.to_string(),
            row.iters.to_string(),
            row.converged.to_string(),
            opt(row.mean_accuracy()),
            opt(row.mean_nmi()),
        ];
        rec.extend(row.scores.iter().map(|s| opt(s.map(|s| s.accuracy))));
        w.write_record(&rec).map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cmd_ablate(args: AblateArgs) -> CmdResult {
    let cfg = resolve_config(&args.solver, Some(ablation_preset()))?;
    let (source, targets) = load_targets(&args.inputs)?;
    let ids: Vec<String> = targets.iter().map(|t| t.domain_id.clone()).collect();
    let pool = thread_pool(args.solver.threads)?;
    let rows = pool.install(|| run_ablation(&source, &targets, &cfg))?;
    let table = ablation_csv(&rows, &ids)?;
    print!("{table}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(Error::from)?;
        fs::write(out.join("ablation.csv"), &table).map_err(Error::from)?;
    }
    Ok(0)
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let spec = SyntheticSpec {
        dim: args.dim,
        classes: args.k,
        per_class: args.per_class,
        targets: args.targets,
        separation: args.separation,
        class_std: args.class_std,
        angle: args.angle,
        offset: args.offset,
        sigma: args.sigma,
        relatedness: args.relatedness,
        center: !args.no_center,
        seed: args.seed,
    };
    let problem = gen_1smt::<f64>(&spec)?;
    fs::create_dir_all(&args.out).map_err(Error::from)?;
    save_csv(&problem.source, args.out.join("source.csv"))?;
    for (m, target) in problem.targets.iter().enumerate() {
        let name = format!("target{}", m + 1);
        save_csv(
            &target.without_labels(),
            args.out.join(format!("{name}.csv")),
        )?;
        let labels = target
            .labels
            .as_deref()
            .expect("synthetic targets carry labels");
        save_labels(labels, args.out.join(format!("{name}.labels.csv")))?;
    }
    fs::write(
        args.out.join("spec.json"),
        serde_json::to_string_pretty(&spec).map_err(Error::from)? + "\n",
    )
    .map_err(Error::from)?;

    // separability check of the first target with plain K-means
    let first = &problem.targets[0];
    let km = kmeans(&first.without_labels(), spec.classes, spec.seed, 300)?;
    let acc = hungarian_accuracy(&km.assign, first.labels.as_deref().expect("labels"))?;
    println!(
        "wrote source ({} samples) and {} targets of dimension {} to {}",
        problem.source.len(),
        problem.targets.len(),
        spec.dim,
        args.out.display()
    );
    println!("K-means accuracy on target1 = {acc:.4}");
    Ok(0)
}
