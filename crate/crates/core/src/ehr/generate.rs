use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};

use crate::exec::{map_indexed, ExecMode};
use crate::rng::{stream, Domain};

use super::ontology::{build_ontology, Ontology};
use super::types::{DataError, DatasetConfig, PatientRecord, Presence, Visit};

/// Fraction of the visit-count range filled on average; with max_visits = 8
/// this lands the mean near the reference cohort's 3.37 visits per patient.
const VISIT_FILL: f64 = 0.24;
/// Minimum code draws per visit and the binomial span above it; the means
/// land near the reference cohort's ~13 unique codes per visit.
const CODE_DRAWS_MIN: u64 = 5;
const CODE_DRAWS_SPAN: u64 = 10;
const CODE_DRAWS_P: f64 = 0.5;
/// Probability a code draw ignores the dynamics and picks a uniform
/// category: observation noise that keeps the task from saturating.
const NOISE_CAT_P: f64 = 0.15;
/// Probability a note token is drawn from a category block rather than the
/// common-word block.
const TOPICAL_TOKEN_P: f64 = 0.7;
/// Weight of the demographic bias relative to the transition logits. Kept
/// well below 1 so the most recent visit's codes, not the static
/// demographics, dominate the next-visit distribution.
const DEMO_BIAS_WEIGHT: f64 = 0.25;

/// The ontology implied by a config; deterministic in `config.seed`.
pub fn ontology_for(config: &DatasetConfig) -> Result<Ontology, DataError> {
    build_ontology(
        config.typing_count,
        config.category_count,
        config.unique_count,
        &mut stream(config.seed, Domain::DatasetGlobal, 0),
    )
}

/// Dataset-wide generative structure: category transition logits, initial
/// logits, and per-demographic-value category biases.
struct Dynamics {
    trans_logits: Vec<Vec<f64>>,
    init_logits: Vec<f64>,
    demo_bias: Vec<Vec<Vec<f64>>>,
}

impl Dynamics {
    fn build(config: &DatasetConfig) -> Dynamics {
        let mut rng = stream(config.seed, Domain::DatasetGlobal, 1);
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let half_normal = Normal::new(0.0, 0.5).unwrap();
        let c = config.category_count;
        let trans_logits = (0..c)
            .map(|_| (0..c).map(|_| std_normal.sample(&mut rng)).collect())
            .collect();
        let init_logits = (0..c).map(|_| std_normal.sample(&mut rng)).collect();
        let demo_bias = config
            .demo_cardinalities
            .iter()
            .map(|&card| {
                (0..card)
                    .map(|_| (0..c).map(|_| half_normal.sample(&mut rng)).collect())
                    .collect()
            })
            .collect();
        Dynamics {
            trans_logits,
            init_logits,
            demo_bias,
        }
    }

    fn patient_bias(&self, demographics: &[usize]) -> Vec<f64> {
        let c = self.init_logits.len();
        let mut bias = vec![0.0; c];
        for (f, &v) in demographics.iter().enumerate() {
            for (b, &x) in bias.iter_mut().zip(&self.demo_bias[f][v]) {
                *b += x * DEMO_BIAS_WEIGHT;
            }
        }
        bias
    }
}

/// Sample a category from `softmax(sharpness * (logits + bias))`.
fn sample_category<R: Rng>(logits: &[f64], bias: &[f64], sharpness: f64, rng: &mut R) -> usize {
    let scaled: Vec<f64> = logits
        .iter()
        .zip(bias)
        .map(|(&l, &b)| sharpness * (l + b))
        .collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&x| (x - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn generate_patient(
    patient_id: usize,
    config: &DatasetConfig,
    ontology: &Ontology,
    dynamics: &Dynamics,
    children: &[Vec<usize>],
) -> PatientRecord {
    let mut rng = stream(config.seed, Domain::Generate, patient_id as u64);
    let visit_span = Binomial::new((config.max_visits - 2) as u64, VISIT_FILL).unwrap();
    let n_visits = 2 + visit_span.sample(&mut rng) as usize;
    let demographics: Vec<usize> = config
        .demo_cardinalities
        .iter()
        .map(|&card| rng.gen_range(0..card))
        .collect();
    let bias = dynamics.patient_bias(&demographics);
    let code_draws = Binomial::new(CODE_DRAWS_SPAN, CODE_DRAWS_P).unwrap();
    let s = config.transition_sharpness;

    let mut visits = Vec::with_capacity(n_visits);
    // transition sources carry multiplicity: the previous visit's category
    // multiset, one entry per code
    let mut prev_cat_multiset: Vec<usize> = Vec::new();
    for _ in 0..n_visits {
        let n_codes = (CODE_DRAWS_MIN + code_draws.sample(&mut rng)) as usize;
        let mut codes = Vec::with_capacity(n_codes);
        for _ in 0..n_codes {
            let cat = if rng.gen::<f64>() < NOISE_CAT_P {
                rng.gen_range(0..config.category_count)
            } else if prev_cat_multiset.is_empty() {
                sample_category(&dynamics.init_logits, &bias, s, &mut rng)
            } else {
                let src = prev_cat_multiset[rng.gen_range(0..prev_cat_multiset.len())];
                sample_category(&dynamics.trans_logits[src], &bias, s, &mut rng)
            };
            let kids = &children[cat];
            codes.push(kids[rng.gen_range(0..kids.len())]);
        }
        codes.sort_unstable();
        codes.dedup();

        let cats = ontology.categories_of(&codes);
        let len_lo = (config.max_note_len / 2).max(1);
        let note_len = rng.gen_range(len_lo..=config.max_note_len);
        let note = (0..note_len)
            .map(|_| sample_token(&cats, config, &mut rng))
            .collect();

        prev_cat_multiset = codes.iter().map(|&c| ontology.category_of(c)).collect();
        visits.push(Visit {
            demographics: demographics.clone(),
            note,
            codes,
            present: Presence::ALL,
        });
    }
    PatientRecord {
        patient_id,
        visits,
    }
}

/// Notes lean on per-category token blocks so the note is an alternative view
/// of the visit's codes; the tail of the vocabulary is a common-word block.
fn sample_token<R: Rng>(cats: &[usize], config: &DatasetConfig, rng: &mut R) -> usize {
    let block = (config.note_vocab / (config.category_count + 1)).max(1);
    let common_start = (config.category_count * block).min(config.note_vocab.saturating_sub(1));
    let topical = !cats.is_empty() && rng.gen::<f64>() < TOPICAL_TOKEN_P;
    if topical {
        let cat = cats[rng.gen_range(0..cats.len())];
        let lo = (cat * block).min(config.note_vocab - 1);
        let hi = ((cat + 1) * block).min(config.note_vocab);
        rng.gen_range(lo..hi.max(lo + 1))
    } else {
        rng.gen_range(common_start..config.note_vocab)
    }
}

/// Generate the full synthetic cohort. Deterministic in `config.seed`; the
/// parallel path produces byte-identical output because every patient draws
/// from its own `(seed, patient_id)` stream.
pub fn generate_dataset_with(
    config: &DatasetConfig,
    mode: ExecMode,
) -> Result<Vec<PatientRecord>, DataError> {
    config.validate()?;
    let ontology = ontology_for(config)?;
    let children = ontology.children_of_categories();
    let dynamics = Dynamics::build(config);
    Ok(map_indexed(mode, config.patient_count, |pid| {
        generate_patient(pid, config, &ontology, &dynamics, &children)
    }))
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<PatientRecord>, DataError> {
    generate_dataset_with(config, ExecMode::default())
}

/// Cohort statistics in the shape of the reference data's summary table.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DatasetStats {
    pub patients: usize,
    pub unique_codes: usize,
    pub category_codes: usize,
    pub typing_codes: usize,
    pub visits: usize,
    pub avg_visits_per_patient: f64,
    pub max_visits_per_patient: usize,
    pub avg_unique_codes_per_visit: f64,
    pub max_unique_codes_per_visit: usize,
    pub avg_category_codes_per_visit: f64,
    pub max_category_codes_per_visit: usize,
    pub avg_typing_codes_per_visit: f64,
    pub max_typing_codes_per_visit: usize,
}

impl DatasetStats {
    pub fn compute(records: &[PatientRecord], ontology: &Ontology) -> DatasetStats {
        let patients = records.len();
        let mut visits = 0usize;
        let mut max_v = 0usize;
        let (mut sum_u, mut max_u) = (0usize, 0usize);
        let (mut sum_c, mut max_c) = (0usize, 0usize);
        let (mut sum_t, mut max_t) = (0usize, 0usize);
        for r in records {
            visits += r.visits.len();
            max_v = max_v.max(r.visits.len());
            for v in &r.visits {
                let nu = v.codes.len();
                let nc = ontology.categories_of(&v.codes).len();
                let nt = ontology.typings_of(&v.codes).len();
                sum_u += nu;
                sum_c += nc;
                sum_t += nt;
                max_u = max_u.max(nu);
                max_c = max_c.max(nc);
                max_t = max_t.max(nt);
            }
        }
        let vf = visits.max(1) as f64;
        DatasetStats {
            patients,
            unique_codes: ontology.unique_count,
            category_codes: ontology.category_count,
            typing_codes: ontology.typing_count,
            visits,
            avg_visits_per_patient: visits as f64 / patients.max(1) as f64,
            max_visits_per_patient: max_v,
            avg_unique_codes_per_visit: sum_u as f64 / vf,
            max_unique_codes_per_visit: max_u,
            avg_category_codes_per_visit: sum_c as f64 / vf,
            max_category_codes_per_visit: max_c,
            avg_typing_codes_per_visit: sum_t as f64 / vf,
            max_typing_codes_per_visit: max_t,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "# of Patients                          {}\n\
             # of Unique Codes                      {}\n\
             # of Category Codes                    {}\n\
             # of Typing Codes                      {}\n\
             # of Visits                            {}\n\
             Avg / Max # Visit per Patient          {:.2} / {}\n\
             Avg / Max # Unique Codes per Visit     {:.2} / {}\n\
             Avg / Max # Category Codes per Visit   {:.2} / {}\n\
             Avg / Max # Typing Codes per Visit     {:.2} / {}\n",
            self.patients,
            self.unique_codes,
            self.category_codes,
            self.typing_codes,
            self.visits,
            self.avg_visits_per_patient,
            self.max_visits_per_patient,
            self.avg_unique_codes_per_visit,
            self.max_unique_codes_per_visit,
            self.avg_category_codes_per_visit,
            self.max_category_codes_per_visit,
            self.avg_typing_codes_per_visit,
            self.max_typing_codes_per_visit,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DatasetConfig {
        DatasetConfig {
            patient_count: 300,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = small_config();
        let a = generate_dataset_with(&cfg, ExecMode::Sequential).unwrap();
        let b = generate_dataset_with(&cfg, ExecMode::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let cfg = small_config();
        let a = generate_dataset_with(&cfg, ExecMode::Sequential).unwrap();
        let b = generate_dataset_with(&cfg, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn visit_counts_in_expected_band() {
        let cfg = DatasetConfig {
            patient_count: 2000,
            ..DatasetConfig::default()
        };
        let records = generate_dataset(&cfg).unwrap();
        let total: usize = records.iter().map(|r| r.visits.len()).sum();
        let mean = total as f64 / records.len() as f64;
        assert!((2.5..=4.5).contains(&mean), "mean visits {mean}");
        assert!(records.iter().all(|r| r.visits.len() >= 2));
        assert!(records.iter().all(|r| r.visits.len() <= cfg.max_visits));
    }

    #[test]
    fn records_are_valid_and_sentinel_free() {
        let cfg = small_config();
        let records = generate_dataset(&cfg).unwrap();
        for r in &records {
            for v in &r.visits {
                v.validate(&cfg).unwrap();
                assert!(v.present.all());
                assert!(!v.codes.contains(&cfg.code_sentinel()));
                assert!(!v.note.contains(&cfg.unk_token()));
            }
        }
    }

    #[test]
    fn hierarchy_sizes_are_monotone_per_visit() {
        let cfg = small_config();
        let ontology = ontology_for(&cfg).unwrap();
        let records = generate_dataset(&cfg).unwrap();
        for r in &records {
            for v in &r.visits {
                let u = v.codes.len();
                let c = ontology.categories_of(&v.codes).len();
                let t = ontology.typings_of(&v.codes).len();
                assert!(t <= c && c <= u);
            }
        }
    }

    /// Plug-in mutual information between consecutive visits' categories.
    fn category_mi(records: &[PatientRecord], ontology: &Ontology) -> f64 {
        let c = ontology.category_count;
        let mut joint = vec![vec![0.0f64; c]; c];
        let mut n = 0.0;
        for r in records {
            for w in r.visits.windows(2) {
                let a = ontology.categories_of(&w[0].codes);
                let b = ontology.categories_of(&w[1].codes);
                for &x in &a {
                    for &y in &b {
                        joint[x][y] += 1.0;
                        n += 1.0;
                    }
                }
            }
        }
        let mut px = vec![0.0; c];
        let mut py = vec![0.0; c];
        for x in 0..c {
            for y in 0..c {
                joint[x][y] /= n;
                px[x] += joint[x][y];
                py[y] += joint[x][y];
            }
        }
        let mut mi = 0.0;
        for x in 0..c {
            for y in 0..c {
                let j = joint[x][y];
                if j > 0.0 {
                    mi += j * (j / (px[x] * py[y])).ln();
                }
            }
        }
        mi / std::f64::consts::LN_2
    }

    #[test]
    fn zero_sharpness_gives_near_zero_mi() {
        let cfg = DatasetConfig {
            patient_count: 2000,
            transition_sharpness: 0.0,
            ..DatasetConfig::default()
        };
        let ontology = ontology_for(&cfg).unwrap();
        let records = generate_dataset(&cfg).unwrap();
        let mi = category_mi(&records, &ontology);
        assert!(mi < 0.015, "expected near-zero MI, got {mi}");
    }

    #[test]
    fn default_sharpness_gives_informative_dynamics() {
        let base = DatasetConfig {
            patient_count: 1000,
            ..DatasetConfig::default()
        };
        let ontology = ontology_for(&base).unwrap();
        let sharp = category_mi(&generate_dataset(&base).unwrap(), &ontology);
        let flat_cfg = DatasetConfig {
            transition_sharpness: 0.0,
            ..base
        };
        let flat = category_mi(&generate_dataset(&flat_cfg).unwrap(), &ontology);
        assert!(
            sharp > 0.025 && sharp > 3.0 * flat,
            "expected informative dynamics: sharp {sharp} vs flat {flat}"
        );
    }

    #[test]
    fn stats_has_table_shape() {
        let cfg = small_config();
        let ontology = ontology_for(&cfg).unwrap();
        let records = generate_dataset(&cfg).unwrap();
        let stats = DatasetStats::compute(&records, &ontology);
        assert_eq!(stats.patients, 300);
        assert_eq!(stats.unique_codes, 200);
        let text = stats.render();
        assert_eq!(text.lines().count(), 9);
    }
}
