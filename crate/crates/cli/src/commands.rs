use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use adaptest_core::data::{
    generate_synthetic, ingest_reader, make_eval_partitions, make_folds, Dataset, FoldSplit,
};
use adaptest_core::engine::PolicyKind;
use adaptest_core::evaluation::{
    ability_error_study, emit_report, eval_policy, exposure_and_overlap, mi_analysis, EvalOptions, ReportFormat,
    SelectionRecord,
};
use adaptest_core::policy::ActionMode;
use adaptest_core::response::fit_irt_mle;
use adaptest_core::trainer::{train, Checkpoint, TrainConfig};
use adaptest_service::ServiceConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cli::{
    AnalysisKind, AnalyzeArgs, Cli, Command, EvalArgs, FoldsArgs, FormatArg, IngestArgs, ServeArgs, SplitArg,
    SynthArgs, TrainArgs,
};
use crate::error::{CliError, CliResult};

pub fn run(cli: Cli) -> CliResult {
    let workers = cli.workers;
    if workers == Some(0) {
        return Err(CliError::usage("--workers must be at least 1"));
    }
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Folds(a) => folds(a),
        Command::Train(a) => train_cmd(a, workers),
        Command::Eval(a) => eval(a, workers.unwrap_or(1)),
        Command::Analyze(a) => analyze(a),
        Command::Serve(a) => serve(a),
    }
}

fn ingest(a: IngestArgs) -> CliResult {
    let f = File::open(&a.input).map_err(|e| CliError::usage(format!("{}: {e}", a.input.display())))?;
    let d = ingest_reader(BufReader::new(f), a.min_interactions)?;
    d.save_csv(&a.output)?;
    println!(
        "ingested {} students, {} questions, {} records -> {}",
        d.num_students(),
        d.num_questions(),
        d.num_records(),
        a.output.display()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    let (d, truth) = generate_synthetic(a.students, a.questions, a.seed)?;
    d.save_csv(&a.output)?;
    let truth_path = a.truth.unwrap_or_else(|| sibling(&a.output, "truth.json"));
    write_json(&truth_path, &truth)?;
    println!(
        "generated {} students x {} questions ({} records) -> {}, truth -> {}",
        a.students,
        a.questions,
        d.num_records(),
        a.output.display(),
        truth_path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldsFile {
    seed: u64,
    folds: Vec<FoldSplit>,
}

fn folds(a: FoldsArgs) -> CliResult {
    let d = load_data(&a.data)?;
    let folds = make_folds(&d, a.seed)?;
    write_json(&a.output, &FoldsFile { seed: a.seed, folds })?;
    println!("wrote 5 folds of {} students -> {}", d.num_students(), a.output.display());
    Ok(())
}

fn pick_fold(data: &Dataset, folds: Option<&Path>, seed: u64, fold: usize) -> CliResult<FoldSplit> {
    let all = match folds {
        Some(p) => read_json::<FoldsFile>(p)?.folds,
        None => make_folds(data, seed)?,
    };
    let n = all.len();
    let f = all
        .into_iter()
        .find(|f| f.fold_index == fold)
        .ok_or_else(|| CliError::usage(format!("fold {fold} does not exist ({n} folds)")))?;
    let max = data.num_students();
    if let Some(&bad) = f
        .train_students
        .iter()
        .chain(&f.val_students)
        .chain(&f.test_students)
        .find(|&&s| s >= max)
    {
        return Err(CliError::usage(format!("folds file names student {bad}, data has {max}")));
    }
    Ok(f)
}

fn train_cmd(a: TrainArgs, workers: Option<usize>) -> CliResult {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v.into(); } )* };
    }
    set!(model, policy, n, seed, max_epochs, patience, batch_size, question_lr, policy_lr, hidden, policy_hidden);
    if let Some(w) = workers {
        cfg.workers = w;
    }
    println!("effective config: {}", to_json(&cfg)?);
    let problems = cfg.problems();
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(|p| format!("  - {p}")).collect();
        return Err(CliError::usage(format!("invalid training config:\n{}", list.join("\n"))));
    }
    let data = load_data(&a.data)?;
    let fold = pick_fold(&data, a.folds.as_deref(), cfg.seed, a.fold)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.jsonl"));
    let log = File::create(&log_path).map_err(|e| CliError::usage(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(log);
    let outcome = train(&data, &fold, &cfg, Some(&mut log))?;
    log.flush()
        .map_err(|e| CliError::runtime(format!("{}: {e}", log_path.display())))?;
    outcome.checkpoint.save(&a.out)?;
    let t = &outcome.checkpoint.training;
    println!(
        "trained {}-{} on fold {}: {} epochs, best epoch {}, validation accuracy {}",
        cfg.model,
        cfg.policy,
        fold.fold_index,
        t.epochs_run,
        t.epoch,
        t.val_accuracy.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    println!("checkpoint -> {}, log -> {}", a.out.display(), log_path.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Split {
    Test,
    Val,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalConfig {
    fold: usize,
    n_list: Vec<usize>,
    repetitions: usize,
    /// Seeds the evaluation partitions and random draws; defaults to the
    /// checkpoint's training seed.
    seed: Option<u64>,
    split: Split,
    policy: Option<PolicyKind>,
    method: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fold: 0,
            n_list: vec![1, 3, 5, 10],
            repetitions: 5,
            seed: None,
            split: Split::Test,
            policy: None,
            method: None,
        }
    }
}

/// Per-student selections of one evaluation run, consumed by `analyze`.
#[derive(Debug, Serialize, Deserialize)]
struct SelectionsFile {
    method: String,
    fold: usize,
    config: EvalConfig,
    selections: Vec<SelectionRecord>,
}

fn eval(a: EvalArgs, workers: usize) -> CliResult {
    let mut cfg: EvalConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => EvalConfig::default(),
    };
    if let Some(v) = a.fold {
        cfg.fold = v;
    }
    if let Some(v) = a.n_list {
        cfg.n_list = v;
    }
    if let Some(v) = a.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = a.split {
        cfg.split = match v {
            SplitArg::Test => Split::Test,
            SplitArg::Val => Split::Val,
        };
    }
    if let Some(v) = a.policy {
        cfg.policy = Some(v.into());
    }
    if let Some(v) = a.method {
        cfg.method = Some(v);
    }
    let mut checkpoint = Checkpoint::load(&a.checkpoint)?;
    let seed = *cfg.seed.get_or_insert(checkpoint.config.seed);
    let policy = *cfg.policy.get_or_insert(checkpoint.policy_kind);
    let method = cfg
        .method
        .get_or_insert_with(|| format!("{}-{}", checkpoint.model_kind, policy))
        .clone();
    println!("effective config: {}", to_json(&cfg)?);
    if cfg.n_list.is_empty() {
        return Err(CliError::usage("n list is empty"));
    }
    let data = load_data(&a.data)?;
    check_questions(&checkpoint, &data)?;
    let fold = pick_fold(&data, a.folds.as_deref(), checkpoint.config.seed, cfg.fold)?;
    let students = match cfg.split {
        Split::Test => &fold.test_students,
        Split::Val => &fold.val_students,
    };
    let partitions = make_eval_partitions(&data, students, cfg.repetitions, seed)?;
    checkpoint.policy_kind = policy;
    let engine = checkpoint.engine(ActionMode::Greedy)?;
    let opts = EvalOptions {
        method: method.clone(),
        fold: fold.fold_index,
        n_list: cfg.n_list.clone(),
        seed,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let outcome = pool.install(|| eval_policy(&engine, &data, &partitions, &opts))?;
    emit_report(&outcome.report, &a.report, format_for(&a.report, a.format))?;
    for row in &outcome.report.rows {
        println!(
            "{} n={}: accuracy {:.4} auc {}",
            row.method,
            row.n,
            row.accuracy,
            row.auc.map_or("undefined".into(), |v| format!("{v:.4}"))
        );
    }
    println!("report -> {}", a.report.display());
    if let Some(path) = &a.selections {
        write_json(
            path,
            &SelectionsFile {
                method,
                fold: fold.fold_index,
                config: cfg,
                selections: outcome.selections,
            },
        )?;
        println!("selections -> {}", path.display());
    }
    Ok(())
}

fn check_questions(checkpoint: &Checkpoint, data: &Dataset) -> CliResult {
    if checkpoint.num_questions() != data.num_questions() {
        return Err(adaptest_core::Error::QuestionCountMismatch {
            checkpoint: checkpoint.num_questions(),
            data: data.num_questions(),
        }
        .into());
    }
    if checkpoint.question_ids != data.question_ids() {
        return Err(CliError::usage("checkpoint and data use different question ids"));
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> CliResult {
    let data = load_data(&a.data)?;
    let files = a
        .selections
        .iter()
        .map(|p| read_json::<SelectionsFile>(p))
        .collect::<CliResult<Vec<_>>>()?;
    for f in &files {
        if let Some(bad) = f
            .selections
            .iter()
            .find(|r| r.student >= data.num_students() || r.questions.iter().any(|&j| j >= data.num_questions()))
        {
            return Err(CliError::usage(format!(
                "selections of {} do not match the data (student {})",
                f.method, bad.student_id
            )));
        }
    }
    let single = |kind: &str| -> CliResult<&SelectionsFile> {
        match files.as_slice() {
            [f] => Ok(f),
            _ => Err(CliError::usage(format!("{kind} analysis takes exactly one selections file"))),
        }
    };
    let format = format_for(&a.report, a.format);
    let settings = serde_json::json!({
        "kind": format!("{:?}", a.kind).to_lowercase(),
        "selections": a.selections,
        "n": a.n,
        "n_list": a.n_list,
        "map_lambda": a.map_lambda,
        "fit_lambda": a.fit_lambda,
        "seed": a.seed,
    });
    println!("effective config: {settings}");
    match a.kind {
        AnalysisKind::Mi => {
            let methods: Vec<(String, Vec<Vec<usize>>)> = files
                .iter()
                .map(|f| (f.method.clone(), f.selections.iter().map(|r| r.questions.clone()).collect()))
                .collect();
            let report = mi_analysis(&data, &methods)?;
            emit_report(&report, &a.report, format)?;
            for m in &report.methods {
                let shares: Vec<String> = m.fractions.iter().map(|f| format!("{f:.3}")).collect();
                println!("{}: bin shares {}", m.method, shares.join(" "));
            }
        }
        AnalysisKind::Exposure => {
            let f = single("exposure")?;
            let shortest = f.selections.iter().map(|r| r.questions.len()).min().unwrap_or(0);
            let n = a.n.unwrap_or(shortest);
            if n > shortest {
                return Err(CliError::usage(format!("n={n} exceeds the recorded selection length {shortest}")));
            }
            let sels: Vec<Vec<usize>> = f.selections.iter().map(|r| r.questions[..n].to_vec()).collect();
            let report = exposure_and_overlap(&f.method, &sels, data.num_questions(), n, a.seed)?;
            emit_report(&report, &a.report, format)?;
            println!(
                "{}: median exposure {:.4}, {:.1}% of questions above 20%, mean overlap {:.4}",
                report.method,
                report.median_rate,
                100.0 * report.fraction_above_20,
                report.mean_overlap
            );
        }
        AnalysisKind::Ability => {
            let f = single("ability")?;
            let fit = fit_irt_mle(&data, a.fit_lambda)?;
            let report = ability_error_study(
                &f.method,
                &data,
                &f.selections,
                &fit.global.difficulties,
                fit.global.prior_mean,
                a.map_lambda,
                &a.n_list,
            )?;
            emit_report(&report, &a.report, format)?;
            for row in &report.rows {
                println!("{} n={}: mse {:.4} over {}", report.method, row.n, row.mse, row.count);
            }
        }
    }
    println!("report -> {}", a.report.display());
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let mut cfg: ServiceConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(v) = a.checkpoint {
        cfg.checkpoint = v;
    }
    if let Some(v) = a.bind {
        cfg.bind = v;
    }
    if let Some(v) = a.metadata {
        cfg.metadata = Some(v);
    }
    if let Some(v) = a.answer_log {
        cfg.answer_log = Some(v);
    }
    if let Some(v) = a.session_ttl_secs {
        cfg.session_ttl_secs = v;
    }
    if let Some(v) = a.capacity {
        cfg.capacity = v;
    }
    if let Some(v) = a.n_max {
        cfg.n_max = Some(v);
    }
    if let Some(v) = a.map_lambda {
        cfg.map_lambda = v;
    }
    println!("effective config: {}", to_json(&cfg)?);
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(e.to_string()))?;
    rt.block_on(adaptest_service::serve(cfg))?;
    Ok(())
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    let f = File::open(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    // Canonical files are already filtered; keep every student.
    Ok(ingest_reader(BufReader::new(f), 0)?)
}

fn format_for(path: &Path, flag: Option<FormatArg>) -> ReportFormat {
    match flag {
        Some(f) => f.into(),
        None if path.extension().is_some_and(|e| e == "csv") => ReportFormat::Csv,
        None => ReportFormat::Json,
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string(value).map_err(|e| CliError::runtime(e.to_string()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let f = File::create(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}
