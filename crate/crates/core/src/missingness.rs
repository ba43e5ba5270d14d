//! Uncertain-missingness corruption and curriculum-guided random data erasing.
//!
//! Corruption drops whole modalities per visit under per-modality
//! probabilities, rejecting the all-missing pattern so exactly `2^3 - 1`
//! presence patterns can occur. Erasing is the training-time augmentation:
//! single-point removal of a modality at one random visit, scheduled by an
//! epoch-indexed probability menu.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::{PatientRecord, Presence};
use crate::exec::{map_indexed, ExecMode};
use crate::rng::{stream, Domain};

#[derive(Debug, Error)]
pub enum MissingnessError {
    #[error("spec (1, 1, 1) would force the excluded all-missing pattern")]
    AllMissingForced,
    #[error("missing probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("curriculum schedule invalid: {0}")]
    InvalidSchedule(String),
    #[error("cannot parse missingness triple from {0:?}; expected \"(p_D, p_N, p_C)\"")]
    ParseError(String),
}

/// Per-modality drop probabilities, ordered (demographics, notes, codes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub p_demo: f64,
    pub p_note: f64,
    pub p_codes: f64,
}

impl MissingnessSpec {
    pub const COMPLETE: MissingnessSpec = MissingnessSpec {
        p_demo: 0.0,
        p_note: 0.0,
        p_codes: 0.0,
    };

    pub fn new(p_demo: f64, p_note: f64, p_codes: f64) -> Result<Self, MissingnessError> {
        let spec = MissingnessSpec {
            p_demo,
            p_note,
            p_codes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MissingnessError> {
        if self.p_demo >= 1.0 && self.p_note >= 1.0 && self.p_codes >= 1.0 {
            return Err(MissingnessError::AllMissingForced);
        }
        for p in [self.p_demo, self.p_note, self.p_codes] {
            if !p.is_finite() || !(0.0..1.0).contains(&p) {
                return Err(MissingnessError::InvalidProbability(p));
            }
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.p_demo == 0.0 && self.p_note == 0.0 && self.p_codes == 0.0
    }

    /// Probability of each of the 8 presence masks under independent drops,
    /// before rejection. Index = `Presence::pattern_id`.
    pub fn pattern_distribution(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for id in 0..8 {
            let p = Presence::from_pattern_id(id);
            let d = if p.demo { 1.0 - self.p_demo } else { self.p_demo };
            let n = if p.note { 1.0 - self.p_note } else { self.p_note };
            let c = if p.codes { 1.0 - self.p_codes } else { self.p_codes };
            out[id] = d * n * c;
        }
        out
    }

    /// Per-modality missing rates conditioned on not-all-missing, by exact
    /// enumeration of the 8 masks.
    pub fn conditional_missing_marginals(&self) -> (f64, f64, f64) {
        let dist = self.pattern_distribution();
        let z: f64 = dist[1..].iter().sum();
        let mut md = 0.0;
        let mut mn = 0.0;
        let mut mc = 0.0;
        for id in 1..8 {
            let p = Presence::from_pattern_id(id);
            let w = dist[id] / z;
            if !p.demo {
                md += w;
            }
            if !p.note {
                mn += w;
            }
            if !p.codes {
                mc += w;
            }
        }
        (md, mn, mc)
    }
}

impl fmt::Display for MissingnessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.p_demo, self.p_note, self.p_codes)
    }
}

impl FromStr for MissingnessSpec {
    type Err = MissingnessError;

    /// Accepts the table convention "(p_D, p_N, p_C)", with or without
    /// parentheses.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(MissingnessError::ParseError(s.to_string()));
        }
        let mut vals = [0.0; 3];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .parse::<f64>()
                .map_err(|_| MissingnessError::ParseError(s.to_string()))?;
        }
        MissingnessSpec::new(vals[0], vals[1], vals[2])
    }
}

/// Epoch-indexed erase-probability menus for teacher training and
/// distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSchedule {
    pub e1: usize,
    pub e2: usize,
    pub teacher_early_menu: Vec<f64>,
    pub teacher_late_menu: Vec<f64>,
    pub distill_late_menu: Vec<f64>,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            e1: 5,
            e2: 10,
            teacher_early_menu: vec![0.0, 0.1],
            teacher_late_menu: vec![0.0, 0.1, 0.2],
            distill_late_menu: vec![0.0, 0.1],
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<(), MissingnessError> {
        if self.e1 >= self.e2 {
            return Err(MissingnessError::InvalidSchedule(format!(
                "e1 ({}) must be < e2 ({})",
                self.e1, self.e2
            )));
        }
        for menu in [
            &self.teacher_early_menu,
            &self.teacher_late_menu,
            &self.distill_late_menu,
        ] {
            if menu.is_empty() {
                return Err(MissingnessError::InvalidSchedule("empty menu".into()));
            }
            if let Some(&p) = menu.iter().find(|&&p| !(0.0..1.0).contains(&p)) {
                return Err(MissingnessError::InvalidSchedule(format!(
                    "menu entry {p} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Which loop is asking for an erase probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    TeacherTraining,
    Distillation,
}

/// Draw the erase probability for one batch from the epoch's menu.
///
/// Teacher training samples uniformly from the early menu before `e1` and
/// from the extended menu after; distillation keeps the teacher's inputs
/// complete before `e2` and then samples from the late menu.
pub fn sample_erase_probability<R: Rng>(
    epoch: usize,
    phase: Phase,
    schedule: &CurriculumSchedule,
    rng: &mut R,
) -> f64 {
    match phase {
        Phase::TeacherTraining => {
            let menu = if epoch < schedule.e1 {
                &schedule.teacher_early_menu
            } else {
                &schedule.teacher_late_menu
            };
            menu[rng.gen_range(0..menu.len())]
        }
        Phase::Distillation => {
            if epoch < schedule.e2 {
                0.0
            } else {
                let menu = &schedule.distill_late_menu;
                menu[rng.gen_range(0..menu.len())]
            }
        }
    }
}

/// How curriculum erasing distributes over a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraseMode {
    /// At most `points` visits per modality per record (the default reading:
    /// one erase draw per modality, one uniformly-chosen visit per point).
    SinglePoint { points: usize },
    /// Every input visit draws independently with the erase probability.
    PerVisit,
}

impl Default for EraseMode {
    fn default() -> Self {
        EraseMode::SinglePoint { points: 1 }
    }
}

fn modality_flags(p: &Presence) -> [bool; 3] {
    [p.demo, p.note, p.codes]
}

fn set_modality(p: &mut Presence, m: usize, value: bool) {
    match m {
        0 => p.demo = value,
        1 => p.note = value,
        2 => p.codes = value,
        _ => unreachable!(),
    }
}

/// Corrupt a record's input visits under the spec. The target (last) visit is
/// never corrupted: its codes are the evaluation labels. Each visit's mask is
/// redrawn until at least one modality survives, so all-missing never occurs
/// and relative pattern odds are preserved.
pub fn apply_missingness<R: Rng>(
    record: &PatientRecord,
    spec: &MissingnessSpec,
    rng: &mut R,
) -> Result<PatientRecord, MissingnessError> {
    spec.validate()?;
    let mut out = record.clone();
    let last = out.visits.len() - 1;
    for visit in &mut out.visits[..last] {
        loop {
            let drop_demo = rng.gen::<f64>() < spec.p_demo;
            let drop_note = rng.gen::<f64>() < spec.p_note;
            let drop_codes = rng.gen::<f64>() < spec.p_codes;
            let next = Presence {
                demo: visit.present.demo && !drop_demo,
                note: visit.present.note && !drop_note,
                codes: visit.present.codes && !drop_codes,
            };
            if next.any() {
                visit.present = next;
                break;
            }
        }
    }
    Ok(out)
}

/// Corrupt every record of a dataset with an independent `(seed, index)`
/// stream per record; parallel and sequential paths are bit-identical.
pub fn apply_missingness_to_dataset_with(
    records: &[PatientRecord],
    spec: &MissingnessSpec,
    seed: u64,
    domain: Domain,
    mode: ExecMode,
) -> Result<Vec<PatientRecord>, MissingnessError> {
    spec.validate()?;
    Ok(map_indexed(mode, records.len(), |i| {
        let mut rng = stream(seed, domain, i as u64);
        apply_missingness(&records[i], spec, &mut rng).expect("spec validated")
    }))
}

pub fn apply_missingness_to_dataset(
    records: &[PatientRecord],
    spec: &MissingnessSpec,
    seed: u64,
    domain: Domain,
) -> Result<Vec<PatientRecord>, MissingnessError> {
    apply_missingness_to_dataset_with(records, spec, seed, domain, ExecMode::default())
}

/// Single-point random data erasing over a record's input visits.
///
/// For each modality independently (demo, note, codes order), with
/// probability `p` one uniformly-chosen input visit has that modality's flag
/// cleared. A visit is only eligible if the erase leaves it with at least one
/// present modality; if no visit is eligible the erase is skipped.
pub fn curriculum_erase<R: Rng>(record: &PatientRecord, p: f64, rng: &mut R) -> PatientRecord {
    curriculum_erase_with(record, p, EraseMode::default(), rng)
}

pub fn curriculum_erase_with<R: Rng>(
    record: &PatientRecord,
    p: f64,
    mode: EraseMode,
    rng: &mut R,
) -> PatientRecord {
    assert!((0.0..1.0).contains(&p), "erase probability {p} outside [0, 1)");
    let mut out = record.clone();
    let last = out.visits.len() - 1;
    match mode {
        EraseMode::SinglePoint { points } => {
            for m in 0..3 {
                for _ in 0..points {
                    if rng.gen::<f64>() >= p {
                        continue;
                    }
                    let candidates: Vec<usize> = (0..last)
                        .filter(|&t| {
                            let flags = modality_flags(&out.visits[t].present);
                            flags[m] && flags.iter().filter(|&&b| b).count() >= 2
                        })
                        .collect();
                    if candidates.is_empty() {
                        continue;
                    }
                    let t = candidates[rng.gen_range(0..candidates.len())];
                    set_modality(&mut out.visits[t].present, m, false);
                }
            }
        }
        EraseMode::PerVisit => {
            for m in 0..3 {
                for t in 0..last {
                    if rng.gen::<f64>() >= p {
                        continue;
                    }
                    let flags = modality_flags(&out.visits[t].present);
                    if flags[m] && flags.iter().filter(|&&b| b).count() >= 2 {
                        set_modality(&mut out.visits[t].present, m, false);
                    }
                }
            }
        }
    }
    out
}
