use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lkt_core::clustering::{combo_covariance, fuzzy_cluster, ClusterModel, FuzzyParams};
use lkt_core::event_log::{
    assign_simulated_offsets, parse_events, read_cache, sort_chronological, temporal_slice, write_cache, EventLog,
    ParseOptions, ParseReport, Schema, CACHE_MAGIC,
};
use lkt_core::features::{FeatureSpec, Featurizer};
use lkt_core::metrics::{auc, threshold_agreement, EvalReport};
use lkt_core::model::{export_text, fit_model, fit_nonlinear, load_model, save_model, FittedModel, Predictor, TrainingRun};
use lkt_core::pdr_sim::{
    compare_pdrs, population_students, run_session, student_rng, write_trace_jsonl, SimulationConfig,
};
use lkt_core::synth::{SynthConfig, SynthWorld};
use log::info;
use serde_json::json;

use crate::echo::{echo_path, sibling, Echo};
use crate::{AgreementArgs, ClusterArgs, EvaluateArgs, FitArgs, GenerateArgs, IngestArgs, SimulateArgs, SplitArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    ConfigFile { path: PathBuf, source: io::Error },

    #[error("{}: {source}", path.display())]
    DataFile { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Core(#[from] lkt_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use lkt_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::ConfigFile { .. } => 2,
            CliError::DataFile { .. } => 3,
            CliError::Core(e) => match e {
                E::Config { .. } | E::Parameter(_) => 2,
                E::Model(_) | E::DegenerateLabels | E::UndefinedMetric(_) => 4,
                _ => 3,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn data_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::DataFile {
        path: path.to_path_buf(),
        source,
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(data_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(data_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(data_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(data_err(path))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(data_err(path))
}

/// Reads an event cache, or parses a delimited file when the input does not
/// start with the cache magic.
fn read_log(path: &Path, options: &ParseOptions) -> Result<(EventLog, Option<ParseReport>)> {
    let mut r = open(path)?;
    let mut magic = [0u8; 8];
    let mut filled = 0;
    while filled < magic.len() {
        let n = r.read(&mut magic[filled..]).map_err(data_err(path))?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    let input = io::Cursor::new(magic[..filled].to_vec()).chain(r);
    if filled == magic.len() && &magic == CACHE_MAGIC {
        Ok((read_cache(input)?, None))
    } else {
        let (log, report) = parse_events(input, options)?;
        Ok((log, Some(report)))
    }
}

fn load_log(path: &Path) -> Result<EventLog> {
    let (log, report) = read_log(path, &ParseOptions::default())?;
    if let Some(r) = report {
        info!("{}: parsed {} events, {} bad rows", path.display(), r.events, r.bad_rows.len());
    }
    Ok(log)
}

fn load_model_file(path: &Path) -> Result<FittedModel> {
    Ok(load_model(open(path)?)?)
}

fn write_echo(echo: &Echo, output: &Path, is_dir: bool) -> Result<()> {
    write_file(&echo_path(output, is_dir), echo.to_text().as_bytes())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(lkt_core::Error::from)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn labels(log: &EventLog) -> Vec<bool> {
    log.events()
        .iter()
        .filter(|e| e.is_question())
        .map(|e| e.correct == Some(true))
        .collect()
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{name} must be in [0, 1], got {v}")))
    }
}

pub fn ingest(a: &IngestArgs, seed: u64) -> Result<()> {
    let mut schema = Schema::preset(&a.schema)?;
    if !a.delimiter.is_ascii() {
        return Err(CliError::Usage("delimiter must be a single ASCII character".into()));
    }
    schema.delimiter = a.delimiter as u8;
    let (log, report) = read_log(&a.input, &ParseOptions::with_schema(schema))?;
    let report = report.unwrap_or_else(|| ParseReport {
        rows_read: log.len(),
        events: log.len(),
        ..Default::default()
    });
    let log = sort_chronological(&log);
    let mut w = create(&a.output)?;
    write_cache(&log, &mut w)?;
    finish(w, &a.output)?;
    write_json(&sibling(&a.output, "report.json"), &serde_json::to_value(&report).map_err(lkt_core::Error::from)?)?;

    let mut echo = Echo::new("ingest", seed);
    echo.path("input", &a.input)
        .path("output", &a.output)
        .set("schema", &a.schema)
        .set("delimiter", a.delimiter);
    write_echo(&echo, &a.output, false)?;
    println!(
        "{} events from {} rows ({} bad, {} tied timestamps adjusted)",
        report.events,
        report.rows_read,
        report.bad_rows.len(),
        report.ties_adjusted
    );
    Ok(())
}

pub fn split(a: &SplitArgs, seed: u64) -> Result<()> {
    check_fraction("--start-frac", a.start_frac)?;
    check_fraction("--end-frac", a.end_frac)?;
    let log = load_log(&a.input)?;
    let log = match a.horizon_days {
        Some(days) if days > 0.0 && days.is_finite() => {
            assign_simulated_offsets(&log, (days * 86_400_000.0).round() as i64, seed)?
        }
        Some(days) => return Err(CliError::Usage(format!("--horizon-days must be positive, got {days}"))),
        None => log,
    };
    let log = sort_chronological(&log);
    let split = temporal_slice(&log, a.start_frac, a.end_frac)?;
    if a.audit {
        split.audit()?;
        info!("split audit passed");
    }
    create_dir(&a.output)?;
    for (name, part) in [("train.cache", &split.train), ("test.cache", &split.test)] {
        let path = a.output.join(name);
        let mut w = create(&path)?;
        write_cache(part, &mut w)?;
        finish(w, &path)?;
    }
    let report = json!({
        "events": log.len(),
        "train_events": split.train.len(),
        "test_events": split.test.len(),
        "test_questions": split.test.question_count(),
        "test_students": split.test.students().len(),
        "audited": a.audit,
    });
    write_json(&a.output.join("split.report.json"), &report)?;

    let mut echo = Echo::new("split", seed);
    echo.path("input", &a.input)
        .path("output", &a.output)
        .set("start_frac", format!("{:?}", a.start_frac))
        .set("end_frac", format!("{:?}", a.end_frac))
        .set("audit", a.audit);
    if let Some(d) = a.horizon_days {
        echo.set("horizon_days", format!("{d:?}"));
    }
    write_echo(&echo, &a.output, true)?;
    println!(
        "train {} events, test {} events from {} students",
        split.train.len(),
        split.test.len(),
        report["test_students"]
    );
    Ok(())
}

pub fn fit(a: &FitArgs, seed: u64) -> Result<()> {
    let spec = FeatureSpec::parse(&read_config(&a.spec)?)?;
    let clusters = match &a.clusters {
        Some(p) => Some(Arc::new(ClusterModel::read_table(open(p)?)?)),
        None => None,
    };
    let featurizer = Featurizer::new(spec, clusters)?;
    let run = TrainingRun {
        l2_penalty: a.l2,
        max_iter: a.max_iter,
        outer_cycles: a.outer_cycles,
        ..Default::default()
    };
    run.validate()?;
    let log = load_log(&a.input)?;
    let search = !a.fixed_params && !featurizer.spec().nonlinear_indices().is_empty();
    info!(
        "fitting {} descriptors on {} questions{}",
        featurizer.spec().len(),
        log.question_count(),
        if search { " with parameter search" } else { "" }
    );
    let model = if search {
        fit_nonlinear(&log, &featurizer, &run)?
    } else {
        fit_model(&log, &featurizer, &run)?
    };

    let mut w = create(&a.output)?;
    save_model(&model, &mut w)?;
    finish(w, &a.output)?;
    let coef_path = sibling(&a.output, "coefficients.tsv");
    let mut w = create(&coef_path)?;
    export_text(&model, &mut w)?;
    finish(w, &coef_path)?;

    let d = &model.diagnostics;
    let params: Vec<_> = model
        .nonlinear_params()
        .into_iter()
        .map(|(i, name, value)| json!({"descriptor": i, "label": model.spec().descriptors()[i].label(), "param": name, "value": value}))
        .collect();
    let trace: Vec<_> = d
        .outer_trace
        .iter()
        .map(|p| json!({"cycle": p.cycle, "descriptor": p.descriptor, "value": p.value, "loss": p.loss}))
        .collect();
    let report = json!({
        "questions": log.question_count(),
        "columns": model.catalog().len(),
        "final_loss": d.final_loss,
        "iterations": d.iterations,
        "converged": d.converged,
        "grad_norm": d.grad_norm,
        "loss_history_monotone": d.loss_history.windows(2).all(|w| w[1] <= w[0]),
        "loss_history": d.loss_history,
        "nonlinear_params": params,
        "outer_trace": trace,
    });
    write_json(&sibling(&a.output, "report.json"), &report)?;

    let mut echo = Echo::new("fit", seed);
    echo.path("input", &a.input)
        .path("spec", &a.spec)
        .path("output", &a.output)
        .opt_path("clusters", a.clusters.as_deref())
        .set("l2", format!("{:?}", a.l2))
        .set("max_iter", a.max_iter)
        .set("outer_cycles", a.outer_cycles)
        .set("fixed_params", a.fixed_params)
        .append(model.spec().to_kv());
    write_echo(&echo, &a.output, false)?;
    println!(
        "log-loss {:.6} after {} iterations (converged: {}), {} columns",
        d.final_loss,
        d.iterations,
        d.converged,
        model.catalog().len()
    );
    Ok(())
}

fn score(model: &FittedModel, test: &EventLog, history: Option<&EventLog>) -> Result<Vec<f64>> {
    let mut p = Predictor::new(model);
    if let Some(h) = history {
        p.observe(h)?;
    }
    Ok(p.score(test)?)
}

fn output_or_stdout(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_file(p, bytes),
        None => io::stdout().write_all(bytes).map_err(data_err(Path::new("<stdout>"))),
    }
}

pub fn evaluate(a: &EvaluateArgs, seed: u64) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let test = load_log(&a.input)?;
    let history = a.history.as_deref().map(load_log).transpose()?;
    let predictions = score(&model, &test, history.as_ref())?;
    let labels = labels(&test);
    let report = EvalReport::compute(&predictions, &labels)?;
    let mut text = Vec::new();
    if a.json {
        report.write_json_lines(&mut text)?;
    } else {
        report.write_text(&mut text)?;
    }
    output_or_stdout(a.output.as_deref(), &text)?;

    if let Some(path) = &a.predictions {
        let mut w = create(path)?;
        let write = |w: &mut BufWriter<File>| -> io::Result<()> {
            writeln!(w, "student_id\titem_id\ttimestamp_ms\tcorrect\tprediction")?;
            let questions = test.events().iter().filter(|e| e.is_question());
            for (e, p) in questions.zip(&predictions) {
                let y = u8::from(e.correct == Some(true));
                writeln!(w, "{}\t{}\t{}\t{y}\t{p:?}", e.student_id, e.item_id, e.timestamp_ms)?;
            }
            Ok(())
        };
        write(&mut w).map_err(data_err(path))?;
        finish(w, path)?;
    }

    if let Some(out) = &a.output {
        let mut echo = Echo::new("evaluate", seed);
        echo.path("model", &a.model)
            .path("input", &a.input)
            .opt_path("history", a.history.as_deref())
            .opt_path("predictions", a.predictions.as_deref())
            .set("json", a.json);
        write_echo(&echo, out, false)?;
    }
    info!("auc {:.6} over {} predictions", report.auc, report.n);
    Ok(())
}

pub fn agreement(a: &AgreementArgs, seed: u64) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(CliError::Usage(format!("--threshold must be in (0, 1), got {}", a.threshold)));
    }
    let test = load_log(&a.input)?;
    let history = a.history.as_deref().map(load_log).transpose()?;
    let labels = labels(&test);
    let mut preds = Vec::new();
    for path in &a.model {
        let m = load_model_file(path)?;
        preds.push(score(&m, &test, history.as_ref())?);
    }
    let agree = threshold_agreement(&preds[0], &preds[1], a.threshold)?;
    let mut text = String::new();
    text.push_str(&format!("n\t{}\n", labels.len()));
    text.push_str(&format!("threshold\t{}\n", a.threshold));
    text.push_str(&format!("agreement\t{agree:.6}\n"));
    for (i, p) in preds.iter().enumerate() {
        text.push_str(&format!("auc_{}\t{:.6}\n", i + 1, auc(p, &labels)?));
    }
    output_or_stdout(a.output.as_deref(), text.as_bytes())?;
    if let Some(out) = &a.output {
        let mut echo = Echo::new("agreement", seed);
        echo.path("model_1", &a.model[0])
            .path("model_2", &a.model[1])
            .path("input", &a.input)
            .opt_path("history", a.history.as_deref())
            .set("threshold", format!("{:?}", a.threshold));
        write_echo(&echo, out, false)?;
    }
    Ok(())
}

pub fn cluster(a: &ClusterArgs, seed: u64) -> Result<()> {
    if a.k.iter().any(|&k| k < 2) {
        return Err(CliError::Usage("every --k must be at least 2".into()));
    }
    let log = load_log(&a.input)?;
    let matrix = combo_covariance(&log, a.min_students)?;
    info!("covariance over {} combos", matrix.len());
    create_dir(&a.output)?;
    let mut summary = String::from("k\tobjective\titerations\tconverged\n");
    for &k in &a.k {
        let model = fuzzy_cluster(&matrix, FuzzyParams::new(k, seed))?;
        let path = a.output.join(format!("clusters_k{k}.tsv"));
        let mut w = create(&path)?;
        model.write_table(&mut w)?;
        finish(w, &path)?;
        let objective = model.objective_history.last().copied().unwrap_or(f64::NAN);
        summary.push_str(&format!(
            "{k}\t{objective:.9e}\t{}\t{}\n",
            model.objective_history.len().saturating_sub(1),
            model.converged
        ));
    }
    write_file(&a.output.join("summary.tsv"), summary.as_bytes())?;
    print!("{summary}");

    let ks: Vec<String> = a.k.iter().map(|k| k.to_string()).collect();
    let mut echo = Echo::new("cluster", seed);
    echo.path("input", &a.input)
        .path("output", &a.output)
        .set("k", ks.join(","))
        .set("min_students", a.min_students);
    write_echo(&echo, &a.output, true)
}

pub fn simulate(a: &SimulateArgs, seed: Option<u64>) -> Result<()> {
    let mut config = SimulationConfig::parse(&read_config(&a.pdr)?)?;
    if let Some(n) = a.students {
        if n == 0 {
            return Err(CliError::Usage("--students must be at least 1".into()));
        }
        config.students = n;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(t) = a.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::Usage(format!("--threshold must be in (0, 1), got {t}")));
        }
        config.mastery_threshold = t;
    }
    let base = a.pdr.parent().unwrap_or(Path::new("."));
    let models = config.resolve_models(base)?;
    let students = population_students(config.population, config.pool.clone(), config.students, config.seed)?;
    info!(
        "simulating {} students x {} rules x {} models",
        students.len(),
        config.pdrs.len(),
        models.len()
    );
    let table = compare_pdrs(&students, &models, &config.pdrs, config.mastery_threshold, config.seed)?;
    create_dir(&a.output)?;
    let mut tsv = Vec::new();
    table.write_tsv(&mut tsv)?;
    write_file(&a.output.join("summary.tsv"), &tsv)?;
    io::stdout().write_all(&tsv).map_err(data_err(Path::new("<stdout>")))?;

    if !a.trace.is_empty() {
        let dir = a.output.join("traces");
        create_dir(&dir)?;
        for &i in &a.trace {
            let s = students
                .get(i)
                .ok_or_else(|| CliError::Usage(format!("--trace index {i} exceeds {} students", students.len())))?;
            for (name, m) in &models {
                let model = m.for_student(s)?;
                for pdr in &config.pdrs {
                    let (outcome, _) = run_session(
                        s,
                        &model,
                        &[],
                        pdr,
                        config.mastery_threshold,
                        &mut student_rng(config.seed, i as u64),
                    )?;
                    let path = dir.join(format!("{name}__{}__s{i}.jsonl", pdr.name));
                    let mut w = create(&path)?;
                    write_trace_jsonl(&outcome, &mut w)?;
                    finish(w, &path)?;
                }
            }
        }
    }

    let mut echo = Echo::new("simulate", config.seed);
    echo.path("pdr", &a.pdr).path("output", &a.output);
    if !a.trace.is_empty() {
        let t: Vec<String> = a.trace.iter().map(|i| i.to_string()).collect();
        echo.set("trace", t.join(","));
    }
    echo.append(lkt_core::kv::KvDocument::parse(&config.to_text())?);
    write_echo(&echo, &a.output, true)
}

pub fn generate(a: &GenerateArgs, seed: u64) -> Result<()> {
    let world = SynthWorld::new(SynthConfig {
        students: a.students,
        mean_events: a.mean_events,
        items: a.items,
        combos: a.combos,
        seed,
        ..Default::default()
    })?;
    let mut w = create(&a.output)?;
    io::copy(&mut world.csv_reader(), &mut w).map_err(data_err(&a.output))?;
    finish(w, &a.output)?;
    let mut echo = Echo::new("generate", seed);
    echo.path("output", &a.output)
        .set("students", a.students)
        .set("mean_events", a.mean_events)
        .set("items", a.items)
        .set("combos", a.combos);
    write_echo(&echo, &a.output, false)
}
