//! The distillation objective: modality-wise contrastive and hierarchical
//! distillation, random transformer-feature distillation, fusion (penultimate
//! layer) distillation, dual logit distillation, and the dual task loss,
//! combined into one weighted total.
//!
//! Every loss is a pure function of a (teacher, student) bundle pair pooled
//! over one batch. Teacher arrays enter the tape as constant leaves, so no
//! gradient can flow into the teacher; the student side carries the graph.

use ndarray::s;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{multi_hot, Bundle, BundleVars, PreparedRecord};
use crate::tensor::{Arr, Tape, Var};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("empty batch: no pooled samples for distillation")]
    EmptyBatch,
    #[error("teacher/student bundle shape mismatch at record {record}: {field} {teacher:?} vs {student:?}")]
    ShapeMismatch {
        record: usize,
        field: &'static str,
        teacher: (usize, usize),
        student: (usize, usize),
    },
    #[error("zero-norm representation in modality {0}; cosine similarity undefined")]
    ZeroNorm(&'static str),
    #[error("negative loss weight {name} = {value}")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error("invalid weight {name} = {value}: {why}")]
    InvalidWeight {
        name: &'static str,
        value: f64,
        why: &'static str,
    },
}

/// Which transformer features the random-feature distillation matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// One cross-modal and one self-attention output drawn per call.
    Random,
    /// All five outputs every call (the "not random" comparative setting).
    All,
}

/// Loss-term coefficients and the contrastive hyperparameters, with the
/// ablation toggles exposed so the comparison grids can be rerun.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_mwd: f64,
    pub lambda_tr2d: f64,
    pub lambda_magd: f64,
    pub lambda_dual_ld: f64,
    pub lambda_dual_ce: f64,
    /// Weight of the teacher->student direction in the contrastive loss.
    pub alpha: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Parental-level task-loss weight inside the dual cross-entropy.
    pub hrchy_weight: f64,
    /// Ablation: drop the contrastive half of the modality-wise loss.
    pub mwcd_enabled: bool,
    /// Ablation: drop the parental-logit half of the dual logit loss.
    pub hrchy_ld_enabled: bool,
    pub tr2d_mode: SelectionMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mwd: 1.0,
            lambda_tr2d: 0.1,
            lambda_magd: 1.0,
            lambda_dual_ld: 1.0,
            lambda_dual_ce: 1.0,
            alpha: 0.25,
            tau: 0.1,
            hrchy_weight: 0.1,
            mwcd_enabled: true,
            hrchy_ld_enabled: true,
            tr2d_mode: SelectionMode::Random,
        }
    }
}

impl LossWeights {
    /// All distillation terms off: plain task-loss training.
    pub fn task_only() -> LossWeights {
        LossWeights {
            lambda_mwd: 0.0,
            lambda_tr2d: 0.0,
            lambda_magd: 0.0,
            lambda_dual_ld: 0.0,
            ..LossWeights::default()
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        for (name, value) in [
            ("lambda_mwd", self.lambda_mwd),
            ("lambda_tr2d", self.lambda_tr2d),
            ("lambda_magd", self.lambda_magd),
            ("lambda_dual_ld", self.lambda_dual_ld),
            ("lambda_dual_ce", self.lambda_dual_ce),
            ("hrchy_weight", self.hrchy_weight),
        ] {
            if value < 0.0 || !value.is_finite() {
                return Err(DistillError::NegativeWeight { name, value });
            }
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(DistillError::InvalidWeight {
                name: "tau",
                value: self.tau,
                why: "temperature must be positive",
            });
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DistillError::InvalidWeight {
                name: "alpha",
                value: self.alpha,
                why: "contrastive symmetry weight must lie in [0, 1]",
            });
        }
        Ok(())
    }
}

/// One pooled teacher/student pair: the teacher side is a constant leaf, the
/// student side carries gradients.
#[derive(Debug, Clone, Copy)]
pub struct PooledPair {
    pub teacher: Var,
    pub student: Var,
}

/// A batch's distillation surface, pooled over (record, valid input visit)
/// samples for the per-visit fields and over records for the logits.
#[derive(Debug, Clone)]
pub struct BatchPair {
    /// Modality representations in (demo, note, code) order, `[K, d]`.
    pub r: [PooledPair; 3],
    /// Cross-modal outputs in (demo->note, code->note) order, `[K, d]`.
    pub c: [PooledPair; 2],
    /// Self-attention outputs in (demo->note, code->note, code) order.
    pub s: [PooledPair; 3],
    /// Fusion (penultimate) output, `[K, d]`.
    pub fusion: PooledPair,
    /// Final category logits, `[B, categories]`.
    pub y: PooledPair,
    /// Parental typing logits in (demo, note, code) order, `[B, typings]`.
    pub o: [PooledPair; 3],
    /// Pooled (record, visit) sample count.
    pub k: usize,
    /// Record count.
    pub batch: usize,
}

pub const MODALITY_NAMES: [&str; 3] = ["demo", "note", "code"];

/// Named accessor pair into the teacher (array) and student (var) bundles.
type FieldAccessor = (&'static str, fn(&Bundle) -> &Arr, fn(&BundleVars) -> Var);

/// Pool a batch of per-record bundles into one distillation surface.
/// Only visits flagged valid enter the per-visit pools.
pub fn pool_batch(
    tape: &mut Tape,
    teacher: &[Bundle],
    student: &[BundleVars],
) -> Result<BatchPair, DistillError> {
    if teacher.is_empty() || teacher.len() != student.len() {
        return Err(DistillError::EmptyBatch);
    }

    let field_pairs: [FieldAccessor; 9] = [
        ("r_demo", |b| &b.r_demo, |v| v.r_demo),
        ("r_note", |b| &b.r_note, |v| v.r_note),
        ("r_code", |b| &b.r_code, |v| v.r_code),
        ("c_dn", |b| &b.c_dn, |v| v.c_dn),
        ("c_cn", |b| &b.c_cn, |v| v.c_cn),
        ("s_dn", |b| &b.s_dn, |v| v.s_dn),
        ("s_cn", |b| &b.s_cn, |v| v.s_cn),
        ("s_c", |b| &b.s_c, |v| v.s_c),
        ("fusion", |b| &b.fusion, |v| v.fusion),
    ];
    let mut pooled: Vec<PooledPair> = Vec::with_capacity(9);
    for (name, t_get, s_get) in field_pairs {
        let mut teacher_rows: Vec<Arr> = Vec::new();
        let mut student_parts: Vec<Var> = Vec::new();
        for (i, (tb, sb)) in teacher.iter().zip(student).enumerate() {
            let t_arr = t_get(tb);
            let s_var = s_get(sb);
            let s_dim = tape.value(s_var).dim();
            if t_arr.dim() != s_dim {
                return Err(DistillError::ShapeMismatch {
                    record: i,
                    field: name,
                    teacher: t_arr.dim(),
                    student: s_dim,
                });
            }
            debug_assert_eq!(tb.valid_visit_mask.len(), t_arr.nrows());
            if tb.valid_visit_mask.iter().all(|&v| v) {
                teacher_rows.push(t_arr.clone());
                student_parts.push(s_var);
            } else {
                for (t, &ok) in tb.valid_visit_mask.iter().enumerate() {
                    if ok {
                        teacher_rows.push(t_arr.slice(s![t..t + 1, ..]).to_owned());
                        student_parts.push(tape.slice_rows(s_var, t, 1));
                    }
                }
            }
        }
        if teacher_rows.is_empty() {
            return Err(DistillError::EmptyBatch);
        }
        let t_pool = concat_arrays(&teacher_rows);
        let t_leaf = tape.leaf(t_pool);
        let s_pool = tape.concat_rows(&student_parts);
        pooled.push(PooledPair {
            teacher: t_leaf,
            student: s_pool,
        });
    }

    let logit_pairs: [FieldAccessor; 4] = [
        ("y_hat", |b| &b.y_hat, |v| v.y_hat),
        ("o_demo", |b| &b.o_demo, |v| v.o_demo),
        ("o_note", |b| &b.o_note, |v| v.o_note),
        ("o_code", |b| &b.o_code, |v| v.o_code),
    ];
    let mut logits: Vec<PooledPair> = Vec::with_capacity(4);
    for (name, t_get, s_get) in logit_pairs {
        let mut teacher_rows: Vec<Arr> = Vec::new();
        let mut student_parts: Vec<Var> = Vec::new();
        for (i, (tb, sb)) in teacher.iter().zip(student).enumerate() {
            let t_arr = t_get(tb);
            let s_var = s_get(sb);
            if t_arr.dim() != tape.value(s_var).dim() {
                return Err(DistillError::ShapeMismatch {
                    record: i,
                    field: name,
                    teacher: t_arr.dim(),
                    student: tape.value(s_var).dim(),
                });
            }
            teacher_rows.push(t_arr.clone());
            student_parts.push(s_var);
        }
        let t_leaf = tape.leaf(concat_arrays(&teacher_rows));
        let s_pool = tape.concat_rows(&student_parts);
        logits.push(PooledPair {
            teacher: t_leaf,
            student: s_pool,
        });
    }

    let k = tape.value(pooled[0].teacher).nrows();
    Ok(BatchPair {
        r: [pooled[0], pooled[1], pooled[2]],
        c: [pooled[3], pooled[4]],
        s: [pooled[5], pooled[6], pooled[7]],
        fusion: pooled[8],
        y: logits[0],
        o: [logits[1], logits[2], logits[3]],
        k,
        batch: teacher.len(),
    })
}

fn concat_arrays(parts: &[Arr]) -> Arr {
    let cols = parts[0].ncols();
    let rows: usize = parts.iter().map(Arr::nrows).sum();
    let mut out = Arr::zeros((rows, cols));
    let mut at = 0;
    for p in parts {
        out.slice_mut(s![at..at + p.nrows(), ..]).assign(p);
        at += p.nrows();
    }
    out
}

/// Mean squared error between two pooled nodes: mean over all elements.
pub fn mse(tape: &mut Tape, a: Var, b: Var) -> Var {
    tape.mse(a, b)
}

/// Modality-wise contrastive distillation. For each modality, teacher anchor
/// `i` contrasts against all K student candidates and vice versa; cosine
/// similarities are temperature-scaled, directions mix by `alpha`, anchors
/// average, modalities sum.
pub fn mwcd_loss(
    tape: &mut Tape,
    pair: &BatchPair,
    tau: f64,
    alpha: f64,
) -> Result<Var, DistillError> {
    if pair.k == 0 {
        return Err(DistillError::EmptyBatch);
    }
    let mut total: Option<Var> = None;
    for (m, rp) in pair.r.iter().enumerate() {
        for (side, var) in [("teacher", rp.teacher), ("student", rp.student)] {
            let v = tape.value(var);
            if v.rows().into_iter().any(|r| r.iter().all(|&x| x == 0.0)) {
                let _ = side;
                return Err(DistillError::ZeroNorm(MODALITY_NAMES[m]));
            }
        }
        let tn = tape.l2_normalize_rows(rp.teacher);
        let sn = tape.l2_normalize_rows(rp.student);

        // teacher -> student: anchors are teacher rows, candidates student rows
        let ts = direction_loss(tape, tn, sn, tau);
        // student -> teacher
        let st = direction_loss(tape, sn, tn, tau);

        let ts_w = tape.scale(ts, alpha);
        let st_w = tape.scale(st, 1.0 - alpha);
        let m_loss = tape.add(ts_w, st_w);
        total = Some(match total {
            None => m_loss,
            Some(acc) => tape.add(acc, m_loss),
        });
    }
    Ok(total.expect("three modalities"))
}

/// `-log softmax` over one direction's similarity rows, averaged over
/// anchors: `mean_i [ lse_k(sim_ik / tau) - sim_ii / tau ]`.
fn direction_loss(tape: &mut Tape, anchors: Var, candidates: Var, tau: f64) -> Var {
    let sims = tape.matmul_nt(anchors, candidates);
    let scaled = tape.scale(sims, 1.0 / tau);
    let lse = tape.logsumexp_rows(scaled);
    let diag = tape.take_diag(scaled);
    let per_anchor = tape.sub(lse, diag);
    tape.mean_all(per_anchor)
}

/// Modality-wise hierarchical distillation: summed MSE over the three
/// modality representations.
pub fn mwhd_loss(tape: &mut Tape, pair: &BatchPair) -> Var {
    let mut total: Option<Var> = None;
    for rp in &pair.r {
        let m = mse(tape, rp.teacher, rp.student);
        total = Some(match total {
            None => m,
            Some(acc) => tape.add(acc, m),
        });
    }
    total.expect("three modalities")
}

/// Combined modality-wise distillation: contrastive plus hierarchical.
pub fn mwd_loss(
    tape: &mut Tape,
    pair: &BatchPair,
    tau: f64,
    alpha: f64,
) -> Result<Var, DistillError> {
    let cd = mwcd_loss(tape, pair, tau, alpha)?;
    let hd = mwhd_loss(tape, pair);
    Ok(tape.add(cd, hd))
}

/// Which transformer features a random-mode call matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tr2dChoice {
    pub cmt: usize,
    pub sat: usize,
}

/// Transformer representation random distillation: MSE over either all five
/// final transformer outputs or one randomly selected cross-modal output plus
/// one self-attention output.
pub fn tr2d_loss<R: Rng>(
    tape: &mut Tape,
    pair: &BatchPair,
    mode: SelectionMode,
    rng: &mut R,
) -> (Var, Option<Tr2dChoice>) {
    match mode {
        SelectionMode::All => {
            let mut total: Option<Var> = None;
            for pp in pair.c.iter().chain(&pair.s) {
                let m = mse(tape, pp.teacher, pp.student);
                total = Some(match total {
                    None => m,
                    Some(acc) => tape.add(acc, m),
                });
            }
            (total.expect("five features"), None)
        }
        SelectionMode::Random => {
            let cmt = rng.gen_range(0..2);
            let sat = rng.gen_range(0..3);
            let cm = mse(tape, pair.c[cmt].teacher, pair.c[cmt].student);
            let sm = mse(tape, pair.s[sat].teacher, pair.s[sat].student);
            (tape.add(cm, sm), Some(Tr2dChoice { cmt, sat }))
        }
    }
}

/// Fusion (penultimate layer) distillation.
pub fn magd_loss(tape: &mut Tape, pair: &BatchPair) -> Var {
    mse(tape, pair.fusion.teacher, pair.fusion.student)
}

/// Dual logit distillation on raw pre-sigmoid logits: final level plus,
/// unless ablated, the three parental heads.
pub fn dual_ld_loss(tape: &mut Tape, pair: &BatchPair, hrchy_enabled: bool) -> (Var, Var, Var) {
    let ld = mse(tape, pair.y.teacher, pair.y.student);
    let mut hrchy: Option<Var> = None;
    for op in &pair.o {
        let m = mse(tape, op.teacher, op.student);
        hrchy = Some(match hrchy {
            None => m,
            Some(acc) => tape.add(acc, m),
        });
    }
    let hrchy = hrchy.expect("three parental heads");
    let dual = if hrchy_enabled {
        tape.add(ld, hrchy)
    } else {
        ld
    };
    (dual, ld, hrchy)
}

/// Multi-hot targets for one batch at both prediction levels.
pub struct BatchTargets {
    pub categories: Arr,
    pub typings: Arr,
}

impl BatchTargets {
    pub fn from_records(records: &[&PreparedRecord], categories: usize, typings: usize) -> Self {
        let cat_rows: Vec<Arr> = records
            .iter()
            .map(|r| multi_hot(&r.target_categories, categories))
            .collect();
        let typ_rows: Vec<Arr> = records
            .iter()
            .map(|r| multi_hot(&r.target_typings, typings))
            .collect();
        BatchTargets {
            categories: concat_arrays(&cat_rows),
            typings: concat_arrays(&typ_rows),
        }
    }
}

/// Dual task loss on the student: binary cross-entropy at the category level
/// plus `hrchy_weight` times the summed parental-level cross-entropies.
pub fn dual_ce_loss(
    tape: &mut Tape,
    pair: &BatchPair,
    targets: &BatchTargets,
    hrchy_weight: f64,
) -> (Var, Var, Var) {
    let ce = tape.bce_with_logits(pair.y.student, &targets.categories);
    let mut hrchy: Option<Var> = None;
    for op in &pair.o {
        let l = tape.bce_with_logits(op.student, &targets.typings);
        hrchy = Some(match hrchy {
            None => l,
            Some(acc) => tape.add(acc, l),
        });
    }
    let hrchy = hrchy.expect("three parental heads");
    let weighted = tape.scale(hrchy, hrchy_weight);
    let dual = tape.add(ce, weighted);
    (dual, ce, hrchy)
}

/// Dual task loss straight from per-record bundles, for loops that train
/// without a teacher (teacher pre-training, the no-distillation baseline).
pub fn task_loss(
    tape: &mut Tape,
    bundles: &[BundleVars],
    targets: &BatchTargets,
    hrchy_weight: f64,
) -> Result<(Var, f64, f64), DistillError> {
    if bundles.is_empty() {
        return Err(DistillError::EmptyBatch);
    }
    let y_parts: Vec<Var> = bundles.iter().map(|b| b.y_hat).collect();
    let y = tape.concat_rows(&y_parts);
    let ce = tape.bce_with_logits(y, &targets.categories);
    let mut hrchy: Option<Var> = None;
    for get in [
        |b: &BundleVars| b.o_demo,
        |b: &BundleVars| b.o_note,
        |b: &BundleVars| b.o_code,
    ] {
        let parts: Vec<Var> = bundles.iter().map(get).collect();
        let o = tape.concat_rows(&parts);
        let l = tape.bce_with_logits(o, &targets.typings);
        hrchy = Some(match hrchy {
            None => l,
            Some(acc) => tape.add(acc, l),
        });
    }
    let hrchy = hrchy.expect("three parental heads");
    let weighted = tape.scale(hrchy, hrchy_weight);
    let dual = tape.add(ce, weighted);
    let ce_v = tape.scalar(ce);
    let hrchy_v = tape.scalar(hrchy);
    Ok((dual, ce_v, hrchy_v))
}

/// Raw (pre-lambda) component values plus the weighted total, for the
/// metrics stream and the ablation grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub mwcd: f64,
    pub mwhd: f64,
    pub tr2d: f64,
    pub magd: f64,
    pub dual_ld: f64,
    pub dual_ce: f64,
    pub total: f64,
}

/// The full optimisation objective. Every component is always computed and
/// reported; the lambdas and toggles only decide what reaches the total, so
/// ablating one term cannot perturb another's logged value.
pub fn total_loss<R: Rng>(
    tape: &mut Tape,
    pair: &BatchPair,
    targets: &BatchTargets,
    weights: &LossWeights,
    rng: &mut R,
) -> Result<(Var, LossBreakdown), DistillError> {
    weights.validate()?;
    let mwcd = mwcd_loss(tape, pair, weights.tau, weights.alpha)?;
    let mwhd = mwhd_loss(tape, pair);
    let mwd = if weights.mwcd_enabled {
        tape.add(mwcd, mwhd)
    } else {
        mwhd
    };
    let (tr2d, _) = tr2d_loss(tape, pair, weights.tr2d_mode, rng);
    let magd = magd_loss(tape, pair);
    let (dual_ld, _, _) = dual_ld_loss(tape, pair, weights.hrchy_ld_enabled);
    let (dual_ce, _, _) = dual_ce_loss(tape, pair, targets, weights.hrchy_weight);

    let mut total = tape.scale(mwd, weights.lambda_mwd);
    for (var, lambda) in [
        (tr2d, weights.lambda_tr2d),
        (magd, weights.lambda_magd),
        (dual_ld, weights.lambda_dual_ld),
        (dual_ce, weights.lambda_dual_ce),
    ] {
        let w = tape.scale(var, lambda);
        total = tape.add(total, w);
    }

    let breakdown = LossBreakdown {
        mwcd: tape.scalar(mwcd),
        mwhd: tape.scalar(mwhd),
        tr2d: tape.scalar(tr2d),
        magd: tape.scalar(magd),
        dual_ld: tape.scalar(dual_ld),
        dual_ce: tape.scalar(dual_ce),
        total: tape.scalar(total),
    };
    Ok((total, breakdown))
}
