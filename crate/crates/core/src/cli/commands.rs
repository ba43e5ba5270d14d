use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::distill::LossWeights;
use crate::ehr::{deserialize_dataset, ontology_for, serialize_dataset, DatasetFile, DatasetStats};
use crate::exec::ExecMode;
use crate::missingness::MissingnessSpec;
use crate::model::FusionVariant;
use crate::train::{
    append_records, distill_student, evaluate, train_teacher, Checkpoint, EvalReport,
    MetricsRecord, TrainData, TrainOutcome,
};

use super::config::{
    load_config, render_config, resolve_out, DistillConfig, EvaluateConfig, GenDataConfig,
    TrainTeacherConfig,
};
use super::report::label_for;
use super::{CliError, DistillArgs, EvaluateArgs, GenDataArgs, TrainTeacherArgs};

fn load_dataset(path: &Path) -> Result<DatasetFile, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    deserialize_dataset(BufReader::new(file)).map_err(CliError::from)
}

fn train_data_from(file: &DatasetFile, split: &super::config::SplitSection) -> Result<TrainData, CliError> {
    let ontology = ontology_for(&file.header.config)?;
    Ok(TrainData::new(
        file.header.config.clone(),
        ontology,
        &file.records,
        split.ratios(),
        split.seed,
    )?)
}

fn spec_from(text: &str) -> Result<MissingnessSpec, CliError> {
    text.parse::<MissingnessSpec>().map_err(CliError::from)
}

fn spec_triple(spec: &MissingnessSpec) -> [f64; 3] {
    [spec.p_demo, spec.p_note, spec.p_codes]
}

fn write_run_outputs(
    out_dir: &Path,
    label: &str,
    outcome: &TrainOutcome,
    ckpt: &Checkpoint,
    test_report: &EvalReport,
    spec: Option<[f64; 3]>,
) -> Result<(PathBuf, PathBuf, PathBuf), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join(format!("{label}.ckpt"));
    ckpt.save(&ckpt_path)?;

    let metrics_path = out_dir.join(format!("{label}.metrics.jsonl"));
    if metrics_path.exists() {
        std::fs::remove_file(&metrics_path)?;
    }
    let mut records = vec![MetricsRecord::meta(label, spec)];
    records.extend(outcome.history.iter().cloned());
    let mut test_rec = MetricsRecord::blank("test");
    test_rec.epoch = Some(outcome.best_epoch);
    test_rec.top10 = Some(test_report.top10);
    test_rec.top20 = Some(test_report.top20);
    records.push(test_rec);
    append_records(&metrics_path, &records)?;

    let report_path = out_dir.join(format!("{label}.report.json"));
    let json = serde_json::to_string_pretty(test_report).map_err(|e| CliError::Render(e.to_string()))?;
    std::fs::write(&report_path, json)?;
    Ok((ckpt_path, metrics_path, report_path))
}

fn print_report(report: &EvalReport) {
    println!("test top-10 {:.4}  top-20 {:.4}  targets {}  excluded {}",
        report.top10, report.top20, report.n_targets, report.excluded);
    for row in &report.per_pattern {
        println!(
            "  pattern {:8} count {:6}  top-10 {:.4}  top-20 {:.4}",
            row.pattern, row.count, row.top10, row.top20
        );
    }
}

pub fn cmd_gen_data(args: &GenDataArgs, out_dir: &Path) -> Result<(), CliError> {
    let mut cfg: GenDataConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.dataset.seed = seed;
    }
    if let Some(patients) = args.patients {
        cfg.dataset.patient_count = patients;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if cfg.out.as_os_str().is_empty() {
        cfg.out = PathBuf::from("dataset.jsonl");
    }
    if args.print_config {
        print!("{}", render_config(&cfg)?);
        return Ok(());
    }
    cfg.dataset.validate()?;
    let records = crate::ehr::generate_dataset(&cfg.dataset)?;
    let ontology = ontology_for(&cfg.dataset)?;
    let stats = DatasetStats::compute(&records, &ontology);

    let out_path = resolve_out(&cfg.out, out_dir);
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    serialize_dataset(&records, &cfg.dataset, &mut buf)?;
    std::fs::write(&out_path, &buf)?;

    let stats_text = stats.render();
    let stats_path = out_path.with_extension("stats.txt");
    std::fs::write(&stats_path, &stats_text)?;
    println!("wrote {} patients to {}", records.len(), out_path.display());
    print!("{stats_text}");
    Ok(())
}

pub fn cmd_train_teacher(args: &TrainTeacherArgs, out_dir: &Path) -> Result<(), CliError> {
    let mut cfg: TrainTeacherConfig = load_config(args.config.as_deref())?;
    if let Some(data) = &args.data {
        cfg.data = data.clone();
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = args.max_epochs {
        cfg.train.max_epochs = epochs;
    }
    if let Some(label) = &args.label {
        cfg.label = label.clone();
    }
    if args.print_config {
        print!("{}", render_config(&cfg)?);
        return Ok(());
    }
    let file = load_dataset(&resolve_out(&cfg.data, out_dir))?;
    let data = train_data_from(&file, &cfg.split)?;
    let model_cfg = cfg.model.to_model_config(&file.header.config, FusionVariant::Cmag);
    let (outcome, ckpt) = train_teacher(
        &data,
        &model_cfg,
        &cfg.train,
        &cfg.schedule,
        ExecMode::default(),
    )?;
    let report = evaluate(
        &outcome.model,
        &data.test,
        &data.ontology,
        &data.config,
        &MissingnessSpec::COMPLETE,
        cfg.train.seed,
        ExecMode::default(),
    )?;
    let (ckpt_path, metrics_path, report_path) =
        write_run_outputs(out_dir, &cfg.label, &outcome, &ckpt, &report, None)?;
    println!(
        "teacher {}: best val top-10 {:.4} at epoch {} ({} epochs run)",
        cfg.label, outcome.best_top10, outcome.best_epoch, outcome.epochs_run
    );
    print_report(&report);
    println!("checkpoint {}", ckpt_path.display());
    println!("metrics    {}", metrics_path.display());
    println!("report     {}", report_path.display());
    Ok(())
}

pub fn cmd_distill(args: &DistillArgs, out_dir: &Path) -> Result<(), CliError> {
    let mut cfg: DistillConfig = load_config(args.config.as_deref())?;
    if let Some(data) = &args.data {
        cfg.data = data.clone();
    }
    if let Some(teacher) = &args.teacher {
        cfg.teacher = teacher.clone();
    }
    if let Some(spec) = &args.spec {
        cfg.spec = spec.clone();
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = args.max_epochs {
        cfg.train.max_epochs = epochs;
    }
    if args.no_kd {
        cfg.weights = LossWeights {
            hrchy_weight: cfg.weights.hrchy_weight,
            ..LossWeights::task_only()
        };
    }
    if let Some(label) = &args.label {
        cfg.label = label.clone();
    }
    if cfg.label.is_empty() {
        cfg.label = label_for(&cfg.weights);
    }
    if args.print_config {
        print!("{}", render_config(&cfg)?);
        return Ok(());
    }
    let spec = spec_from(&cfg.spec)?;
    let file = load_dataset(&resolve_out(&cfg.data, out_dir))?;
    let data = train_data_from(&file, &cfg.split)?;
    let student_cfg = cfg.model.to_model_config(&file.header.config, FusionVariant::Mag);
    let no_kd = cfg.weights.lambda_mwd == 0.0
        && cfg.weights.lambda_tr2d == 0.0
        && cfg.weights.lambda_magd == 0.0
        && cfg.weights.lambda_dual_ld == 0.0;
    let outcome = if no_kd {
        crate::train::train_student_no_kd(&data, &student_cfg, &cfg.train, &spec, ExecMode::default())?
    } else {
        let teacher_path = resolve_out(&cfg.teacher, out_dir);
        let teacher_ckpt = Checkpoint::load(&teacher_path).map_err(|e| CliError::Input {
            path: teacher_path.clone(),
            msg: e.to_string(),
        })?;
        distill_student(
            &teacher_ckpt,
            &data,
            &student_cfg,
            &cfg.train,
            &spec,
            &cfg.weights,
            &cfg.schedule,
            ExecMode::default(),
        )?
    };
    let ckpt = Checkpoint::from_model(&outcome.model, false);
    let report = evaluate(
        &outcome.model,
        &data.test,
        &data.ontology,
        &data.config,
        &spec,
        cfg.train.seed,
        ExecMode::default(),
    )?;
    let (ckpt_path, metrics_path, report_path) = write_run_outputs(
        out_dir,
        &cfg.label,
        &outcome,
        &ckpt,
        &report,
        Some(spec_triple(&spec)),
    )?;
    println!(
        "student {} at spec {}: best val top-10 {:.4} at epoch {} ({} epochs run)",
        cfg.label, spec, outcome.best_top10, outcome.best_epoch, outcome.epochs_run
    );
    print_report(&report);
    println!("checkpoint {}", ckpt_path.display());
    println!("metrics    {}", metrics_path.display());
    println!("report     {}", report_path.display());
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs, out_dir: &Path) -> Result<(), CliError> {
    let mut cfg: EvaluateConfig = load_config(args.config.as_deref())?;
    if let Some(ckpt) = &args.checkpoint {
        cfg.checkpoint = ckpt.clone();
    }
    if let Some(data) = &args.data {
        cfg.data = data.clone();
    }
    if let Some(spec) = &args.spec {
        cfg.spec = spec.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.print_config {
        print!("{}", render_config(&cfg)?);
        return Ok(());
    }
    let spec = spec_from(&cfg.spec)?;
    let ckpt_path = resolve_out(&cfg.checkpoint, out_dir);
    let ckpt = Checkpoint::load(&ckpt_path).map_err(|e| CliError::Input {
        path: ckpt_path.clone(),
        msg: e.to_string(),
    })?;
    let model = ckpt.into_model()?;
    let file = load_dataset(&resolve_out(&cfg.data, out_dir))?;
    let data = train_data_from(&file, &cfg.split)?;
    let records = match cfg.part.as_str() {
        "train" => &data.train,
        "valid" => &data.valid,
        "test" => &data.test,
        "all" => &file.records,
        other => {
            return Err(CliError::Render(format!(
                "unknown split part {other:?}; expected train, valid, test, or all"
            )))
        }
    };
    let report = evaluate(
        &model,
        records,
        &data.ontology,
        &data.config,
        &spec,
        cfg.seed,
        ExecMode::default(),
    )?;

    std::fs::create_dir_all(out_dir)?;
    let stem = ckpt_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "checkpoint".to_string());
    let label = format!("{stem}.eval");
    let metrics_path = out_dir.join(format!("{label}.metrics.jsonl"));
    if metrics_path.exists() {
        std::fs::remove_file(&metrics_path)?;
    }
    let mut test_rec = MetricsRecord::blank("test");
    test_rec.top10 = Some(report.top10);
    test_rec.top20 = Some(report.top20);
    append_records(
        &metrics_path,
        &[
            MetricsRecord::meta(&label, Some(spec_triple(&spec))),
            test_rec,
        ],
    )?;
    let report_path = out_dir.join(format!("{label}.report.json"));
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Render(e.to_string()))?;
    std::fs::write(&report_path, json)?;

    println!("evaluate {} on {} under {}", ckpt_path.display(), cfg.part, spec);
    print_report(&report);
    println!("metrics {}", metrics_path.display());
    println!("report  {}", report_path.display());
    Ok(())
}
