use serde::{Deserialize, Serialize};

use crate::distill::{
    pool_batch, task_loss, total_loss, BatchTargets, LossBreakdown, LossWeights,
};
use crate::ehr::{DatasetConfig, Ontology, PatientRecord};
use crate::exec::{map_indexed, ExecMode};
use crate::missingness::{
    apply_missingness_to_dataset_with, curriculum_erase_with, sample_erase_probability,
    CurriculumSchedule, EraseMode, MissingnessSpec, Phase,
};
use crate::model::{prepare_record, Bundle, BundleVars, Mode, Model, ModelConfig, FusionVariant, PreparedRecord};
use crate::rng::{step_record_key, stream, Domain};
use crate::tensor::{Arr, Tape};

use super::checkpoint::Checkpoint;
use super::evaluate::{evaluate, EvalReport};
use super::metrics::MetricsRecord;
use super::optimizer::AdamW;
use super::TrainError;

/// Optimisation protocol: small batches, a patience-based stop on validation
/// top-10, and two learning-rate groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub note_learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Train on every visit prefix of each record instead of the full
    /// history only.
    pub all_prefixes: bool,
    pub erase_mode: EraseMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            max_epochs: 100,
            patience: 5,
            learning_rate: 1e-4,
            note_learning_rate: 2e-5,
            weight_decay: 0.01,
            seed: 0,
            all_prefixes: false,
            erase_mode: EraseMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return Err(TrainError::InvalidConfig(format!(
                "patience ({}) must be positive and below max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if self.learning_rate <= 0.0 || self.note_learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig("learning rates must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::InvalidConfig("weight decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A split dataset plus the structures shared by every loop.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub config: DatasetConfig,
    pub ontology: Ontology,
    pub train: Vec<PatientRecord>,
    pub valid: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
}

impl TrainData {
    pub fn new(
        config: DatasetConfig,
        ontology: Ontology,
        records: &[PatientRecord],
        ratios: (f64, f64, f64),
        split_seed: u64,
    ) -> Result<TrainData, TrainError> {
        let (train, valid, test) = crate::ehr::split_dataset(records, ratios, split_seed)?;
        Ok(TrainData {
            config,
            ontology,
            train,
            valid,
            test,
        })
    }
}

/// What one loop is optimising.
pub enum TrainKind<'a> {
    /// Complete data with curriculum-scheduled random erasing; task loss.
    Teacher { schedule: &'a CurriculumSchedule },
    /// Spec-corrupted data; task loss. The no-distillation baseline.
    Student { spec: &'a MissingnessSpec },
    /// Spec-corrupted student inputs against a frozen teacher reading the
    /// complete batch (erased per the distillation curriculum after `e2`).
    Distill {
        teacher: &'a Model,
        spec: &'a MissingnessSpec,
        schedule: &'a CurriculumSchedule,
    },
}

/// A finished run: the best-validation model plus its history.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<MetricsRecord>,
    pub best_epoch: usize,
    pub best_top10: f64,
    pub epochs_run: usize,
    pub final_valid: EvalReport,
}

fn expand_prefixes(records: &[PatientRecord]) -> Vec<PatientRecord> {
    let mut out = Vec::new();
    for r in records {
        for t in 2..=r.visits.len() {
            out.push(PatientRecord {
                patient_id: r.patient_id,
                visits: r.visits[..t].to_vec(),
            });
        }
    }
    out
}

struct EpochAccumulator {
    sums: LossBreakdown,
    ce_only: f64,
    steps: usize,
    distill: bool,
}

impl EpochAccumulator {
    fn new(distill: bool) -> Self {
        EpochAccumulator {
            sums: LossBreakdown::default(),
            ce_only: 0.0,
            steps: 0,
            distill,
        }
    }

    fn add_breakdown(&mut self, bd: &LossBreakdown) {
        self.sums.mwcd += bd.mwcd;
        self.sums.mwhd += bd.mwhd;
        self.sums.tr2d += bd.tr2d;
        self.sums.magd += bd.magd;
        self.sums.dual_ld += bd.dual_ld;
        self.sums.dual_ce += bd.dual_ce;
        self.sums.total += bd.total;
        self.steps += 1;
    }

    fn add_task(&mut self, dual_ce: f64) {
        self.ce_only += dual_ce;
        self.steps += 1;
    }

    fn record(&self, epoch: usize) -> MetricsRecord {
        let n = self.steps.max(1) as f64;
        let mut rec = MetricsRecord::blank("train");
        rec.epoch = Some(epoch);
        if self.distill {
            rec.mwcd = Some(self.sums.mwcd / n);
            rec.mwhd = Some(self.sums.mwhd / n);
            rec.tr2d = Some(self.sums.tr2d / n);
            rec.magd = Some(self.sums.magd / n);
            rec.dual_ld = Some(self.sums.dual_ld / n);
            rec.dual_ce = Some(self.sums.dual_ce / n);
        } else {
            rec.dual_ce = Some(self.ce_only / n);
        }
        rec
    }
}

fn probe_record(bd: &LossBreakdown) -> MetricsRecord {
    let mut rec = MetricsRecord::blank("probe");
    rec.epoch = Some(0);
    rec.mwcd = Some(bd.mwcd);
    rec.mwhd = Some(bd.mwhd);
    rec.tr2d = Some(bd.tr2d);
    rec.magd = Some(bd.magd);
    rec.dual_ld = Some(bd.dual_ld);
    rec.dual_ce = Some(bd.dual_ce);
    rec
}

fn check_distill_compat(teacher: &Model, student_cfg: &ModelConfig) -> Result<(), TrainError> {
    let t = &teacher.config;
    if t.fusion != FusionVariant::Cmag {
        return Err(TrainError::WrongFusion {
            role: "teacher",
            expected: "CMAG",
        });
    }
    let compatible = t.hidden_dim == student_cfg.hidden_dim
        && t.category_count == student_cfg.category_count
        && t.typing_count == student_cfg.typing_count
        && t.max_visits == student_cfg.max_visits;
    if !compatible {
        return Err(TrainError::TeacherStudentMismatch(format!(
            "teacher ({}d, {} cats, {} typings) vs student ({}d, {} cats, {} typings)",
            t.hidden_dim,
            t.category_count,
            t.typing_count,
            student_cfg.hidden_dim,
            student_cfg.category_count,
            student_cfg.typing_count
        )));
    }
    Ok(())
}

/// The shared epoch/step engine behind all three loops. Every stochastic
/// draw comes from a `(seed, domain, key)` stream, so ablation toggles and
/// the presence or absence of teacher-side draws can never shift the
/// student-side randomness.
pub fn run_training(
    kind: TrainKind<'_>,
    data: &TrainData,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    weights: &LossWeights,
    exec: ExecMode,
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    weights.validate()?;
    model_cfg.validate()?;
    match &kind {
        TrainKind::Teacher { schedule } => {
            schedule.validate()?;
            if model_cfg.fusion != FusionVariant::Cmag {
                return Err(TrainError::WrongFusion {
                    role: "teacher",
                    expected: "CMAG",
                });
            }
        }
        TrainKind::Student { spec } => {
            spec.validate()?;
            if model_cfg.fusion != FusionVariant::Mag {
                return Err(TrainError::WrongFusion {
                    role: "student",
                    expected: "MAG",
                });
            }
        }
        TrainKind::Distill {
            teacher,
            spec,
            schedule,
        } => {
            spec.validate()?;
            schedule.validate()?;
            if model_cfg.fusion != FusionVariant::Mag {
                return Err(TrainError::WrongFusion {
                    role: "student",
                    expected: "MAG",
                });
            }
            check_distill_compat(teacher, model_cfg)?;
        }
    }

    let seed = train_cfg.seed;
    let base_train: Vec<PatientRecord> = if train_cfg.all_prefixes {
        expand_prefixes(&data.train)
    } else {
        data.train.clone()
    };
    // student-side corruption is drawn once and fixed for the whole run
    let student_train: Vec<PatientRecord> = match &kind {
        TrainKind::Teacher { .. } => base_train.clone(),
        TrainKind::Student { spec } | TrainKind::Distill { spec, .. } => {
            apply_missingness_to_dataset_with(&base_train, spec, seed, Domain::Missingness, exec)?
        }
    };

    let mut model = Model::new(model_cfg.clone(), seed)?;
    let mut optimizer = AdamW::new(
        &model.params,
        train_cfg.learning_rate,
        train_cfg.note_learning_rate,
        train_cfg.weight_decay,
    );

    let n = student_train.len();
    let mut history: Vec<MetricsRecord> = Vec::new();
    let mut best_top10 = f64::NEG_INFINITY;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0usize;
    let mut best_valid: Option<EvalReport> = None;
    let mut bad_epochs = 0usize;
    let mut step: u64 = 0;
    let mut epochs_run = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        epochs_run = epoch + 1;
        let order = shuffled_indices(n, seed, epoch);
        let mut acc = EpochAccumulator::new(matches!(kind, TrainKind::Distill { .. }));

        for chunk in order.chunks(train_cfg.batch_size) {
            let erase_p = match &kind {
                TrainKind::Teacher { schedule } => sample_erase_probability(
                    epoch,
                    Phase::TeacherTraining,
                    schedule,
                    &mut stream(seed, Domain::CurriculumMenu, step),
                ),
                TrainKind::Distill { schedule, .. } => sample_erase_probability(
                    epoch,
                    Phase::Distillation,
                    schedule,
                    &mut stream(seed, Domain::CurriculumMenu, step),
                ),
                TrainKind::Student { .. } => 0.0,
            };

            // student-side inputs and targets
            let student_preps: Vec<PreparedRecord> = match &kind {
                TrainKind::Teacher { .. } => chunk
                    .iter()
                    .enumerate()
                    .map(|(bi, &idx)| {
                        let erased = curriculum_erase_with(
                            &base_train[idx],
                            erase_p,
                            train_cfg.erase_mode,
                            &mut stream(seed, Domain::CurriculumErase, step_record_key(step, bi)),
                        );
                        prepare_record(&erased, &data.ontology, &data.config)
                    })
                    .collect(),
                _ => chunk
                    .iter()
                    .map(|&idx| prepare_record(&student_train[idx], &data.ontology, &data.config))
                    .collect(),
            };
            let prep_refs: Vec<&PreparedRecord> = student_preps.iter().collect();
            let targets = BatchTargets::from_records(
                &prep_refs,
                model.config.category_count,
                model.config.typing_count,
            );

            let mut tape = Tape::new(true);
            let pv = model.params.leaves(&mut tape);
            let mut bundles: Vec<BundleVars> = Vec::with_capacity(chunk.len());
            for (bi, prep) in student_preps.iter().enumerate() {
                let mut rng = stream(seed, Domain::Dropout, step_record_key(step, bi));
                let b = model.forward(&mut tape, &pv, &prep.inputs, Mode::Train { rng: &mut rng })?;
                bundles.push(b);
            }

            let loss_var = match &kind {
                TrainKind::Teacher { .. } | TrainKind::Student { .. } => {
                    let (loss, ce, hrchy) =
                        task_loss(&mut tape, &bundles, &targets, weights.hrchy_weight)?;
                    let dual_ce = ce + weights.hrchy_weight * hrchy;
                    if step == 0 {
                        let mut rec = MetricsRecord::blank("probe");
                        rec.epoch = Some(0);
                        rec.dual_ce = Some(dual_ce);
                        history.push(rec);
                    }
                    acc.add_task(dual_ce);
                    if !dual_ce.is_finite() {
                        return Err(TrainError::Diverged { step });
                    }
                    loss
                }
                TrainKind::Distill { teacher, .. } => {
                    // frozen teacher reads the complete records, erased per
                    // the distillation curriculum
                    let teacher_bundles: Vec<Bundle> = {
                        let results: Vec<Result<Bundle, TrainError>> =
                            map_indexed(exec, chunk.len(), |bi| {
                                let idx = chunk[bi];
                                let erased = curriculum_erase_with(
                                    &base_train[idx],
                                    erase_p,
                                    train_cfg.erase_mode,
                                    &mut stream(
                                        seed,
                                        Domain::CurriculumErase,
                                        step_record_key(step, bi),
                                    ),
                                );
                                let prep = prepare_record(&erased, &data.ontology, &data.config);
                                let mut t_tape = Tape::new(false);
                                let t_pv = teacher.params.leaves(&mut t_tape);
                                let b = teacher.forward(&mut t_tape, &t_pv, &prep.inputs, Mode::Eval)?;
                                Ok(b.values(&t_tape))
                            });
                        results.into_iter().collect::<Result<_, _>>()?
                    };
                    let pair = pool_batch(&mut tape, &teacher_bundles, &bundles)?;
                    let mut select_rng = stream(seed, Domain::FeatureSelect, step);
                    let (loss, bd) =
                        total_loss(&mut tape, &pair, &targets, weights, &mut select_rng)?;
                    if step == 0 {
                        history.push(probe_record(&bd));
                    }
                    if !bd.total.is_finite() {
                        return Err(TrainError::Diverged { step });
                    }
                    acc.add_breakdown(&bd);
                    loss
                }
            };

            let mut grads = tape.backward(loss_var);
            let grad_vec: Vec<Option<Arr>> = pv.iter().map(|v| grads.take(*v)).collect();
            drop(tape);
            optimizer.apply(&mut model.params, &grad_vec);
            step += 1;
        }

        history.push(acc.record(epoch));

        let val_spec = match &kind {
            TrainKind::Teacher { .. } => MissingnessSpec::COMPLETE,
            TrainKind::Student { spec } | TrainKind::Distill { spec, .. } => **spec,
        };
        let report = evaluate(
            &model,
            &data.valid,
            &data.ontology,
            &data.config,
            &val_spec,
            seed,
            exec,
        )?;
        let mut rec = MetricsRecord::blank("valid");
        rec.epoch = Some(epoch);
        rec.top10 = Some(report.top10);
        rec.top20 = Some(report.top20);
        history.push(rec);

        if report.top10 > best_top10 {
            best_top10 = report.top10;
            best_params = model.params.clone();
            best_epoch = epoch;
            best_valid = Some(report);
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= train_cfg.patience {
                break;
            }
        }
    }

    model.params = best_params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_top10,
        epochs_run,
        final_valid: best_valid.expect("at least one validation pass"),
    })
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Domain::Shuffle, epoch as u64));
    idx
}

/// Train the CMAG teacher on complete data with curriculum erasing and
/// return it as a frozen checkpoint.
pub fn train_teacher(
    data: &TrainData,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    schedule: &CurriculumSchedule,
    exec: ExecMode,
) -> Result<(TrainOutcome, Checkpoint), TrainError> {
    let outcome = run_training(
        TrainKind::Teacher { schedule },
        data,
        model_cfg,
        train_cfg,
        &LossWeights::default(),
        exec,
    )?;
    let ckpt = Checkpoint::from_model(&outcome.model, true);
    Ok((outcome, ckpt))
}

/// Train the MAG student without a teacher: the no-distillation baseline.
pub fn train_student_no_kd(
    data: &TrainData,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    spec: &MissingnessSpec,
    exec: ExecMode,
) -> Result<TrainOutcome, TrainError> {
    run_training(
        TrainKind::Student { spec },
        data,
        model_cfg,
        train_cfg,
        &LossWeights::default(),
        exec,
    )
}

/// Offline distillation: the teacher checkpoint must be frozen, and its
/// parameter digest is verified unchanged across the run. `spec` is the
/// student-phase missingness, identical at training and inference.
#[allow(clippy::too_many_arguments)]
pub fn distill_student(
    teacher_ckpt: &Checkpoint,
    data: &TrainData,
    student_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    spec: &MissingnessSpec,
    weights: &LossWeights,
    schedule: &CurriculumSchedule,
    exec: ExecMode,
) -> Result<TrainOutcome, TrainError> {
    if !teacher_ckpt.frozen {
        return Err(TrainError::UnfrozenTeacher);
    }
    let teacher = teacher_ckpt.into_model()?;
    let digest_before = teacher.params.digest();
    let outcome = run_training(
        TrainKind::Distill {
            teacher: &teacher,
            spec,
            schedule,
        },
        data,
        student_cfg,
        train_cfg,
        weights,
        exec,
    )?;
    let digest_after = teacher.params.digest();
    if digest_before != digest_after {
        return Err(TrainError::TeacherMutated);
    }
    Ok(outcome)
}
