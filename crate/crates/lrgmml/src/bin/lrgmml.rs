//! Command-line surface: train and evaluate low-rank metrics, run rank/t
//! sweeps, check the gradient against finite differences, and compute the
//! full-rank baseline.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lrgmml::error::Error;
use lrgmml::gradcheck::finite_difference_check;
use lrgmml::grassmann::StiefelPoint;
use lrgmml::io::{
    load_csv, load_libsvm, load_model, model_to_string, parse_results_csv, plot_data_csv,
    results_to_csv, save_model, write_file, LabelColumn,
};
use lrgmml::objective::{gmml_closed_form, MetricModel, PairScatter};
use lrgmml::pipeline::{
    embed, generate_pairs, knn_error, pair_budget, run_experiment, select_t, train_lrgmml,
    Dataset, ExperimentConfig, Method, ResultRecord,
};
use lrgmml::solver::{BetaRule, SolverOptions};

#[derive(Parser)]
#[command(
    name = "lrgmml",
    version,
    about = "Low-rank Mahalanobis metric learning on the Grassmann manifold"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a rank-r metric from labeled data and save it.
    Train(TrainArgs),
    /// Evaluate a saved metric with a k-NN classifier.
    Eval(EvalArgs),
    /// Run the full rank/t experiment protocol and emit results CSVs.
    Sweep(SweepArgs),
    /// Validate the analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Compute the full-rank closed-form baseline metric.
    GmmlBaseline(BaselineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Libsvm,
}

#[derive(Args)]
struct DataArgs {
    /// Input data file.
    #[arg(long)]
    data: PathBuf,
    /// Input format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Label column for CSV input: 'last' or a 0-based column index.
    #[arg(long, default_value = "last")]
    label_col: String,
    /// Skip the first row of CSV input.
    #[arg(long)]
    has_header: bool,
}

impl DataArgs {
    fn load_from(&self, path: &Path) -> Result<Dataset, Error> {
        match self.format {
            Format::Csv => {
                let label_col = if self.label_col == "last" {
                    LabelColumn::Last
                } else {
                    let idx: usize = self.label_col.parse().map_err(|_| {
                        Error::InvalidArgument(format!(
                            "--label-col must be 'last' or a column index, got '{}'",
                            self.label_col
                        ))
                    })?;
                    LabelColumn::Index(idx)
                };
                load_csv(path, label_col, self.has_header)
            }
            Format::Libsvm => load_libsvm(path),
        }
    }

    fn load(&self) -> Result<Dataset, Error> {
        self.load_from(&self.data)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BetaFlag {
    HestenesStiefel,
    PolakRibiere,
    SteepestDescent,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    armijo_c1: f64,
    #[arg(long, default_value_t = 0.5)]
    backtrack_factor: f64,
    #[arg(long, default_value_t = 30)]
    max_line_search: usize,
    #[arg(long, default_value_t = 1.0)]
    initial_step: f64,
    #[arg(long, value_enum, default_value_t = BetaFlag::HestenesStiefel)]
    beta: BetaFlag,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            armijo_c1: self.armijo_c1,
            backtrack_factor: self.backtrack_factor,
            max_line_search: self.max_line_search,
            initial_step: self.initial_step,
            beta_rule: match self.beta {
                BetaFlag::HestenesStiefel => BetaRule::HestenesStiefel,
                BetaFlag::PolakRibiere => BetaRule::PolakRibiere,
                BetaFlag::SteepestDescent => BetaRule::SteepestDescent,
            },
        }
    }
}

fn parse_t(s: &str) -> Result<Option<f64>, String> {
    if s == "auto" {
        return Ok(None);
    }
    let t: f64 = s
        .parse()
        .map_err(|_| format!("--t must be a number in [0, 1] or 'auto', got '{s}'"))?;
    if !(0.0..=1.0).contains(&t) {
        return Err(format!("--t must lie in [0, 1], got {t}"));
    }
    Ok(Some(t))
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Rank of the learned metric.
    #[arg(long)]
    rank: usize,
    /// Geodesic weight in [0, 1], or 'auto' to select it on an inner split.
    #[arg(long, value_parser = parse_t, default_value = "auto")]
    t: Option<f64>,
    /// Pairs to sample per set (default: 40 * c * (c-1), capped).
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file; the solver trace lands beside it as <out>.trace.csv.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved model file.
    #[arg(long)]
    model: PathBuf,
    /// Training data (the k-NN reference set).
    #[arg(long)]
    train: PathBuf,
    /// Test data.
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    data: DataFormatOnly,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Append one result row to this CSV (created with a header if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Method label recorded in the results row.
    #[arg(long, default_value = "lrgmml")]
    method: String,
    /// Run index recorded in the results row.
    #[arg(long, default_value_t = 0)]
    run: usize,
}

/// Format flags without a --data path, for commands that take several files.
#[derive(Args)]
struct DataFormatOnly {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, default_value = "last")]
    label_col: String,
    #[arg(long)]
    has_header: bool,
}

impl DataFormatOnly {
    fn as_data_args(&self, path: &Path) -> DataArgs {
        DataArgs {
            data: path.to_path_buf(),
            format: self.format,
            label_col: self.label_col.clone(),
            has_header: self.has_header,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated rank list, e.g. --ranks 2,4,6,9,13.
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    /// Optional TOML experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Results CSV path; plot data lands beside it as <out with .plot.csv>.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Record measured wall time in the seconds column (off by default so
    /// identical invocations produce byte-identical files).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Ambient dimension of the synthetic instances.
    #[arg(long)]
    d: usize,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instances per t value.
    #[arg(long, default_value_t = 5)]
    instances: usize,
    #[arg(long, default_value_t = 20)]
    directions: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.5, 0.7])]
    t_values: Vec<f64>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = |s: &str| -> Result<f64, String> {
        match parse_t(s)? {
            Some(t) => Ok(t),
            None => Err("--t must be a number for the baseline".into()),
        }
    })]
    t: f64,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn pair_counts(labels: &[usize], requested: Option<usize>) -> (usize, usize) {
    match requested {
        Some(n) => (n, n),
        None => pair_budget(labels, 40),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let data = args.data.load()?;
    if args.rank == 0 || args.rank > data.dim() {
        return Err(Error::InvalidArgument(format!(
            "--rank {} out of range for dimension {}",
            args.rank,
            data.dim()
        )));
    }
    let solver = args.solver.options();
    solver.validate()?;

    let t = match args.t {
        Some(t) => t,
        None => {
            let cfg = ExperimentConfig {
                rank_list: vec![args.rank],
                seed: args.seed,
                solver: solver.clone(),
                ..ExperimentConfig::default()
            };
            let t = select_t(Method::Lrgmml, &data, args.rank, &cfg, args.seed, args.seed ^ 0x9e37)?;
            println!("selected t = {t} on an inner 80/20 split");
            t
        }
    };

    let (count_s, count_d) = pair_counts(&data.labels, args.pairs);
    let (similar, dissimilar) = generate_pairs(&data.labels, count_s, count_d, args.seed)?;
    let (model, trace) = train_lrgmml(&data.features, &similar, &dissimilar, args.rank, t, &solver)?;

    save_model(&model, &args.out)?;
    let trace_path = PathBuf::from(format!("{}.trace.csv", args.out.display()));
    write_file(&trace_path, &trace.to_csv())?;

    println!(
        "trained rank-{} metric on {} ({} samples, {} + {} pairs)",
        args.rank,
        data.name,
        data.len(),
        similar.len(),
        dissimilar.len()
    );
    println!(
        "final cost {:.6e} after {} iterations ({:?}); model -> {}, trace -> {}",
        trace.final_cost(),
        trace.iterations(),
        trace.termination,
        args.out.display(),
        trace_path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let method = Method::parse(&args.method)?;
    let model = load_model(&args.model)?;
    let train = args.data.as_data_args(&args.train).load()?;
    let test = args.data.as_data_args(&args.test).load()?;
    if train.dim() != model.ambient_dim() || test.dim() != model.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "eval",
            expected: format!("{} features", model.ambient_dim()),
            got: format!("{} train / {} test", train.dim(), test.dim()),
        });
    }
    // Label spaces must agree across the two files.
    let mut test_labels = Vec::with_capacity(test.len());
    for (i, name) in test.labels.iter().map(|&l| (l, &test.label_names[l])) {
        let _ = i;
        match train.label_names.iter().position(|n| n == name) {
            Some(id) => test_labels.push(id),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "test label '{name}' never appears in the training data"
                )))
            }
        }
    }

    let train_emb = embed(&model, &train.features)?;
    let test_emb = embed(&model, &test.features)?;
    let error = knn_error(&train_emb, &train.labels, &test_emb, &test_labels, args.k)?;
    println!("k-NN error rate (k = {}): {error}", args.k);

    if let Some(out) = &args.out {
        let record = ResultRecord {
            dataset: test.name.clone(),
            method,
            rank: model.rank(),
            t: model.t,
            run: args.run,
            error,
            seconds: 0.0,
            iterations: 0,
        };
        let mut records = if out.exists() {
            parse_results_csv(&std::fs::read_to_string(out).map_err(|e| {
                Error::io(format!("reading {}", out.display()), e)
            })?)?
        } else {
            Vec::new()
        };
        records.push(record);
        write_file(out, &results_to_csv(&records, false))?;
        println!("appended result row to {}", out.display());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let data = args.data.load()?;
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            toml::from_str::<ExperimentConfig>(&text).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: e.to_string(),
            })?
        }
        None => ExperimentConfig::default(),
    };
    if !args.ranks.is_empty() {
        cfg.rank_list = args.ranks.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = args.runs {
        cfg.num_runs = runs;
    }
    cfg.validate(data.dim())?;

    let records = run_experiment(&data, &cfg)?;
    write_file(&args.out, &results_to_csv(&records, args.timing))?;
    let plot_path = args.out.with_extension("plot.csv");
    write_file(&plot_path, &plot_data_csv(&records))?;

    println!(
        "swept {} over ranks {:?} with {} run(s): {} result rows",
        data.name,
        cfg.rank_list,
        cfg.num_runs,
        records.len()
    );
    println!("results -> {}", args.out.display());
    println!("plot data -> {}", plot_path.display());
    for line in plot_data_csv(&records).lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if let [method, rank, mean, std, runs] = cells[..] {
            println!(
                "  {method:>9} rank {rank:>3}: error {:.4} +/- {:.4} over {runs} run(s)",
                mean.parse::<f64>().unwrap_or(f64::NAN),
                std.parse::<f64>().unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Error> {
    if args.rank == 0 || args.rank > args.d {
        return Err(Error::InvalidArgument(format!(
            "--rank {} out of range for --d {}",
            args.rank, args.d
        )));
    }
    let report = finite_difference_check(
        args.d,
        args.rank,
        &args.t_values,
        args.instances,
        args.directions,
        args.seed,
    )?;
    println!(
        "kappa = {:.12} (spread {:.3e} across {} instances)",
        report.kappa,
        report.kappa_spread(),
        report.instances
    );
    println!(
        "max relative error after fixing kappa: {:.3e} over {} directions/instance",
        report.max_rel_err, report.directions_per_instance
    );
    if report.max_rel_err <= 1e-5 {
        println!("gradient check PASSED");
        Ok(())
    } else {
        Err(Error::NumericalCheckFailed(format!(
            "max relative error {:.3e} > 1e-5",
            report.max_rel_err
        )))
    }
}

fn cmd_baseline(args: BaselineArgs) -> Result<(), Error> {
    let data = args.data.load()?;
    let (count_s, count_d) = pair_counts(&data.labels, args.pairs);
    let (similar, dissimilar) = generate_pairs(&data.labels, count_s, count_d, args.seed)?;
    let sc_s = PairScatter::from_pairs(&data.features, &similar)?;
    let sc_d = PairScatter::from_pairs(&data.features, &dissimilar)?;
    let a = gmml_closed_form(&sc_s, &sc_d, args.t)?;
    let d = data.dim();
    let model = MetricModel {
        u: StiefelPoint::from_matrix(nalgebra::DMatrix::identity(d, d))?,
        b: a,
        t: args.t,
    };
    // Round-trip through the serializer so the in-memory model and the file
    // agree exactly.
    write_file(&args.out, &model_to_string(&model))?;
    println!(
        "full-rank baseline (d = {d}, t = {}) on {} -> {}",
        args.t,
        data.name,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::GmmlBaseline(args) => cmd_baseline(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class())
        }
    }
}
