use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use sklr::data::{apply_scaling, fit_scaling, load_csv, load_features_csv, validation_split};
use sklr::model::{load_model, save_model, train_model};
use sklr::tuning::{
    c_grid, kfold_grid_search, lambda_bound_for, lambda_choice, lambda_grid, lambda_sweep,
    write_cells_csv, write_folds_csv, write_sweep_csv, CvConfig, CvResult, LambdaMode,
    SelectionRule, VALIDATION_FRACTION,
};
use sklr::{
    smo_train, Dataset, Hyperparams, KernelSpec, LabelColumn, SklrError, SolverOptions, WssKind,
};

#[derive(Parser, Debug)]
#[command(name = "sklr", version, about = "Sparse kernel logistic regression")]
struct Cli {
    /// Seed for every random choice (fold assignment, splits).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for grid cells and folds.
    #[arg(long, global = true, env = "SKLR_THREADS")]
    threads: Option<usize>,
    /// Suppress informational output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write it as JSON.
    Train(TrainArgs),
    /// Write decision values, probabilities and labels for a CSV.
    Predict(PredictArgs),
    /// Accuracy of a saved model on a labelled CSV.
    Eval(EvalArgs),
    /// k-fold cross-validation with per-fold hyperparameter selection.
    Cv(CvArgs),
    /// Like `cv`, but writes every evaluated grid cell.
    Grid(CvArgs),
    /// Train along a λ grid at fixed C.
    Sweep(SweepArgs),
    /// Upper bound on useful λ values.
    Bound(BoundArgs),
    /// Compare first- and second-order working-set selection.
    BenchWss(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Label column, by header name or 0-based index.
    #[arg(long, default_value = "label")]
    label: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelKind {
    Gaussian,
    Linear,
    Polynomial,
}

#[derive(Args, Debug, Clone)]
struct KernelArgs {
    #[arg(long, value_enum, default_value_t = KernelKind::Gaussian)]
    kernel: KernelKind,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[arg(long, default_value_t = 1.0)]
    coef: f64,
}

impl KernelArgs {
    fn spec(&self) -> KernelSpec {
        match self.kernel {
            KernelKind::Gaussian => KernelSpec::Gaussian { sigma: self.sigma },
            KernelKind::Linear => KernelSpec::Linear,
            KernelKind::Polynomial => KernelSpec::Polynomial {
                degree: self.degree,
                coef: self.coef,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WssArg {
    First,
    Second,
}

impl From<WssArg> for WssKind {
    fn from(w: WssArg) -> Self {
        match w {
            WssArg::First => WssKind::FirstOrder,
            WssArg::Second => WssKind::SecondOrder,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Distance kept from the bounds 0 and C.
    #[arg(long, default_value_t = 1e-5)]
    gamma: f64,
    /// KKT tolerance.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = WssArg::Second)]
    wss: WssArg,
}

impl SolverArgs {
    fn hyper(&self, c: f64, lambda: f64) -> Hyperparams {
        Hyperparams {
            c,
            lambda,
            gamma: self.gamma,
            kkt_tol: self.tol,
            max_iter: self.max_iter,
            ..Hyperparams::default()
        }
    }

    fn options(&self) -> SolverOptions {
        SolverOptions {
            wss: self.wss.into(),
            audit: false,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(
        short = 'C',
        long = "C",
        default_value_t = 1.0,
        allow_negative_numbers = true
    )]
    c: f64,
    #[arg(
        long,
        default_value_t = 0.0,
        conflicts_with = "lambda_choice",
        allow_negative_numbers = true
    )]
    lambda: f64,
    /// Use λ = C/10.
    #[arg(long)]
    lambda_choice: bool,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Where to write the model.
    #[arg(long = "out-model", alias = "out", default_value = "model.json")]
    out_model: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Label column to drop from the input, if present.
    #[arg(long)]
    label: Option<String>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleArg {
    BestAccuracy,
    #[value(name = "sparsest-of-3")]
    SparsestOf3,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Comma-separated C values; defaults to 1e-4 … 1e4.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    c_values: Option<Vec<f64>>,
    /// Number of λ values in [0, C].
    #[arg(long, default_value_t = 10)]
    n_lambda: usize,
    /// Use λ = C/10 instead of a λ grid.
    #[arg(long, conflicts_with = "lambda")]
    lambda_choice: bool,
    /// Use one fixed λ for every C.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value_t = RuleArg::BestAccuracy)]
    selection_rule: RuleArg,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(
        short = 'C',
        long = "C",
        default_value_t = 1.0,
        allow_negative_numbers = true
    )]
    c: f64,
    #[arg(long, default_value_t = 10)]
    n_lambda: usize,
    /// Fraction held out for testing.
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(
        short = 'C',
        long = "C",
        default_value_t = 1.0,
        allow_negative_numbers = true
    )]
    c: f64,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Re-solve at λ = bound and report the smallest minority α.
    #[arg(long)]
    verify: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(
        short = 'C',
        long = "C",
        default_value_t = 1.0,
        allow_negative_numbers = true
    )]
    c: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

struct Ctx {
    seed: u64,
    quiet: bool,
    json: bool,
}

impl Ctx {
    /// Prints a JSON value or, in text mode, the given lines.
    fn report(&self, value: serde_json::Value, text: impl FnOnce() -> Vec<String>) {
        if self.json {
            println!("{value}");
        } else if !self.quiet {
            for line in text() {
                println!("{line}");
            }
        }
    }

    fn warn(&self, msg: &str) {
        if !self.quiet {
            eprintln!("warning: {msg}");
        }
    }
}

fn load(d: &DataArgs) -> sklr::Result<Dataset> {
    load_csv(&d.data, &LabelColumn::parse(&d.label))
}

fn output(path: Option<&Path>) -> sklr::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|source| {
            SklrError::Io {
                path: p.to_path_buf(),
                source,
            }
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> sklr::Result<()> {
    let d = load(&a.data)?;
    let lambda = if a.lambda_choice {
        lambda_choice(a.c)
    } else {
        a.lambda
    };
    let h = a.solver.hyper(a.c, lambda);
    let fitted = train_model(&d, a.kernel.spec(), &h, a.solver.options())?;
    save_model(&fitted.model, &a.out_model)?;
    let r = &fitted.report;
    let warning = (!r.converged()).then(|| {
        format!(
            "stopped at max_iter = {} before reaching the KKT tolerance",
            h.max_iter
        )
    });
    if let Some(w) = &warning {
        if !ctx.json {
            ctx.warn(w);
        }
    }
    let value = json!({
        "iterations": r.iterations,
        "kkt_residual": r.kkt_residual_final,
        "objective": r.objective_final,
        "termination": r.termination,
        "selection_ratio": fitted.model.selection_ratio,
        "n_support": fitted.model.n_support(),
        "C": h.c,
        "lambda": h.lambda,
        "wss": r.wss_kind,
        "seconds": r.wall_time,
        "model": a.out_model,
        "warning": warning,
    });
    ctx.report(value, || {
        vec![
            format!("iterations       {}", r.iterations),
            format!("kkt_residual     {:.3e}", r.kkt_residual_final),
            format!("objective        {:.10}", r.objective_final),
            format!(
                "selection_ratio  {:.4} ({} of {})",
                fitted.model.selection_ratio,
                fitted.model.n_support(),
                fitted.model.n_train
            ),
            format!("termination      {}", r.termination),
            format!("seconds          {:.3}", r.wall_time),
            format!("model            {}", a.out_model.display()),
        ]
    });
    Ok(())
}

fn cmd_predict(_ctx: &Ctx, a: &PredictArgs) -> sklr::Result<()> {
    let model = load_model(&a.model)?;
    let label = a.label.as_deref().map(LabelColumn::parse);
    let (x, _) = load_features_csv(&a.data, label.as_ref())?;
    if x.nrows() > 0 && x.ncols() != model.n_features() {
        return Err(SklrError::Dimension {
            expected: model.n_features(),
            found: x.ncols(),
        });
    }
    let preds = if x.nrows() == 0 {
        Vec::new()
    } else {
        model.predict_rows(&x)?
    };
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    w.write_record(["decision", "prob_pos", "label"])?;
    for p in preds {
        w.write_record([
            p.decision.to_string(),
            p.prob_pos.to_string(),
            (p.label as i64).to_string(),
        ])?;
    }
    w.flush().map_err(|e| SklrError::Csv(e.into()))?;
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> sklr::Result<()> {
    let model = load_model(&a.model)?;
    let d = load(&a.data)?;
    let acc = model.accuracy(&d)?;
    ctx.report(
        json!({
            "accuracy": acc,
            "n": d.len(),
            "selection_ratio": model.selection_ratio,
            "n_support": model.n_support(),
        }),
        || {
            vec![
                format!("accuracy         {acc:.4} ({} points)", d.len()),
                format!("selection_ratio  {:.4}", model.selection_ratio),
            ]
        },
    );
    Ok(())
}

fn cv_config(ctx: &Ctx, a: &CvArgs) -> CvConfig {
    let lambda_mode = match (a.lambda_choice, a.lambda) {
        (true, _) => LambdaMode::Choice,
        (false, Some(v)) => LambdaMode::Fixed(v),
        (false, None) => LambdaMode::Grid { n: a.n_lambda },
    };
    CvConfig {
        k_folds: a.k,
        kernel: a.kernel.spec(),
        base: a.solver.hyper(1.0, 0.0),
        c_values: a.c_values.clone().unwrap_or_else(c_grid),
        lambda_mode,
        rule: match a.selection_rule {
            RuleArg::BestAccuracy => SelectionRule::BestAccuracy,
            RuleArg::SparsestOf3 => SelectionRule::SparsestOfTop3,
        },
        validation_fraction: VALIDATION_FRACTION,
        wss: a.solver.wss.into(),
        seed: ctx.seed,
    }
}

fn cv_summary(ctx: &Ctx, r: &CvResult) {
    #[derive(Serialize)]
    struct Fold {
        fold: usize,
        c: f64,
        lambda: f64,
        test_accuracy: f64,
        selection_ratio: f64,
    }
    let folds: Vec<Fold> = r
        .folds
        .iter()
        .map(|f| Fold {
            fold: f.fold,
            c: f.chosen.c,
            lambda: f.chosen.lambda,
            test_accuracy: f.test_accuracy,
            selection_ratio: f.selection_ratio,
        })
        .collect();
    let value = json!({
        "mean_accuracy": r.mean_accuracy,
        "std_accuracy": r.std_accuracy,
        "mean_selection_ratio": r.mean_ratio,
        "std_selection_ratio": r.std_ratio,
        "rule": r.rule,
        "folds": folds,
    });
    if ctx.json {
        eprintln!("{value}");
    } else if !ctx.quiet {
        eprintln!(
            "accuracy {:.4} ({:.4})  selection_ratio {:.4} ({:.4})",
            r.mean_accuracy, r.std_accuracy, r.mean_ratio, r.std_ratio
        );
    }
}

fn cmd_cv(ctx: &Ctx, a: &CvArgs, all_cells: bool) -> sklr::Result<()> {
    let d = load(&a.data)?;
    let r = kfold_grid_search(&d, &cv_config(ctx, a))?;
    let out = output(a.out.as_deref())?;
    if all_cells {
        write_cells_csv(&r, out)?;
    } else {
        write_folds_csv(&r, out)?;
    }
    cv_summary(ctx, &r);
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs) -> sklr::Result<()> {
    let d = load(&a.data)?;
    let (train, test) = validation_split(&d, a.test_fraction, ctx.seed)?;
    let base = a.solver.hyper(a.c, 0.0);
    let lambdas = lambda_grid(a.c, a.n_lambda);
    let rows = lambda_sweep(
        &train,
        &test,
        a.kernel.spec(),
        &base,
        &lambdas,
        a.solver.options(),
    )?;
    for r in rows.iter().filter(|r| !r.converged) {
        ctx.warn(&format!("lambda = {} stopped at max_iter", r.lambda));
    }
    write_sweep_csv(&rows, output(a.out.as_deref())?)
}

fn cmd_bound(ctx: &Ctx, a: &BoundArgs) -> sklr::Result<()> {
    let raw = load(&a.data)?;
    let d = apply_scaling(&raw, &fit_scaling(&raw))?;
    let kernel = a.kernel.spec();
    let h = a.solver.hyper(a.c, 0.0);
    let b = lambda_bound_for(&d, &kernel, &h)?;
    let mut verify = serde_json::Value::Null;
    let mut lines = vec![format!("lambda_upper_bound {}", b.bound)];
    if a.verify {
        let hb = h.with_lambda(b.bound.max(0.0));
        let sol = smo_train(&d, kernel, &hb, a.solver.options())?;
        let min_alpha = (0..d.len())
            .filter(|&i| b.minority_label.is_none_or(|m| d.labels()[i] == m))
            .map(|i| sol.state.alpha()[i])
            .fold(f64::INFINITY, f64::min);
        let c_bar = h.upper();
        lines.push(format!("min_minority_alpha {min_alpha}"));
        lines.push(format!("c_bar              {c_bar}"));
        lines.push(format!(
            "saturated          {}",
            min_alpha >= c_bar - 10.0 * h.kkt_tol
        ));
        verify = json!({
            "min_minority_alpha": min_alpha,
            "c_bar": c_bar,
            "saturated": min_alpha >= c_bar - 10.0 * h.kkt_tol,
        });
    }
    ctx.report(
        json!({
            "lambda_upper_bound": b.bound,
            "C": h.c,
            "gamma": h.gamma,
            "minority_label": b.minority_label,
            "verify": verify,
        }),
        || lines,
    );
    Ok(())
}

fn cmd_bench(ctx: &Ctx, a: &BenchArgs) -> sklr::Result<()> {
    let raw = load(&a.data)?;
    let d = apply_scaling(&raw, &fit_scaling(&raw))?;
    let h = a.solver.hyper(a.c, a.lambda);
    let repeats = a.repeats.max(1);
    let mut rows = Vec::new();
    for wss in [WssKind::FirstOrder, WssKind::SecondOrder] {
        let mut times = Vec::with_capacity(repeats);
        let mut last = None;
        for _ in 0..repeats {
            let started = Instant::now();
            let sol = smo_train(&d, a.kernel.spec(), &h, SolverOptions { wss, audit: false })?;
            times.push(started.elapsed().as_secs_f64());
            last = Some(sol.report);
        }
        let r = last.expect("at least one repeat");
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let min = times.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push((wss, r, mean, min));
    }
    let (it1, it2) = (rows[0].1.iterations as f64, rows[1].1.iterations as f64);
    let gap = (rows[0].1.objective_final - rows[1].1.objective_final).abs();
    let value = json!({
        "rows": rows.iter().map(|(w, r, mean, min)| json!({
            "wss": w,
            "iterations": r.iterations,
            "objective": r.objective_final,
            "converged": r.converged(),
            "mean_seconds": mean,
            "min_seconds": min,
        })).collect::<Vec<_>>(),
        "iteration_ratio": it2 / it1,
        "objective_gap": gap,
        "repeats": repeats,
    });
    ctx.report(value, || {
        let mut lines = vec![format!(
            "{:<14}{:>12}{:>22}{:>14}{:>14}",
            "wss", "iterations", "objective", "mean_s", "min_s"
        )];
        for (w, r, mean, min) in &rows {
            lines.push(format!(
                "{:<14}{:>12}{:>22.12}{:>14.6}{:>14.6}",
                w.to_string(),
                r.iterations,
                r.objective_final,
                mean,
                min
            ));
        }
        lines.push(format!("iteration ratio second/first {:.4}", it2 / it1));
        lines.push(format!("objective gap {gap:.3e}"));
        lines
    });
    Ok(())
}

fn run(cli: Cli) -> sklr::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| SklrError::InvalidParam(format!("threads: {e}")))?;
    }
    let ctx = Ctx {
        seed: cli.seed,
        quiet: cli.quiet,
        json: cli.json,
    };
    match &cli.command {
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Predict(a) => cmd_predict(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Cv(a) => cmd_cv(&ctx, a, false),
        Command::Grid(a) => cmd_cv(&ctx, a, true),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Bound(a) => cmd_bound(&ctx, a),
        Command::BenchWss(a) => cmd_bench(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_contract() { 2 } else { 1 })
        }
    }
}
